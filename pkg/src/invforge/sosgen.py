"""Invariant templates and SDP assembly by monomial coefficient matching.

Four identity families are generated, each read as "left side minus all
Gram-weighted multipliers minus margin equals zero":

* ``init``      phi_{l0}(x)          = M0 + sum_l M_l * theta_l
* ``discrete``  phi_{l'}(x')         = W0 + sum_i W_i * g_i + sum_u V_u * rho_u
* ``flow``      Lie(phi_l, f_l)(x)   = P0 + sum_k P_k * psi_k + eps1
* ``unsafe``    -phi_l(x)            = Q0 + sum_j Q_j * zeta_j + eps2

where every capital letter stands for ``m(x)^T X m(x)`` with a PSD block X.
In the default ``split`` frame the discrete family is matched over the
current and primed variables together.  The ``shared`` frame identifies x'
with x (guard, reset and post-invariant over one copy of the variables); it
exists to replay certificates written in that convention.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .model import HybridSystem
from .poly import Polynomial, enumerate_monomials, grlex_key, lie_derivative

log = logging.getLogger(__name__)

PER_LOCATION = "per-location"
INDUCTIVE = "inductive"
SPLIT = "split"
SHARED = "shared"

DEFAULT_EPS_MIN = Fraction(1, 1000)


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class Template:
    location: str
    monomials: tuple
    coeff_ids: tuple  # scalar indices of the c_alpha


@dataclass(frozen=True)
class GramBlock:
    name: str
    identity: str
    index: int  # 0 for the free SOS term, k >= 1 multiplies constraint k
    basis: tuple
    variables: tuple
    constraint: Optional[Polynomial] = None

    @property
    def size(self) -> int:
        return len(self.basis)

    def polynomial(self, matrix) -> Polynomial:
        """m^T X m (times the constraint, when there is one) for an exact matrix."""
        return gram_polynomial(self.basis, self.variables, matrix, self.constraint)


@dataclass(frozen=True)
class Scalar:
    name: str
    lower: Optional[Fraction] = None  # None means free


@dataclass
class Identity:
    name: str
    family: str
    location: str
    variables: tuple
    degree: int
    lhs_terms: dict  # scalar index -> Polynomial image of that template coefficient
    block_ids: list = field(default_factory=list)
    margin: Optional[int] = None
    transition: Optional[tuple] = None


@dataclass(frozen=True)
class Equality:
    identity: str
    monomial: tuple
    coeffs: dict  # ("X", block, i, j) with i <= j, or ("s", scalar) -> Fraction
    rhs: Fraction


@dataclass
class SdpProblem:
    system: HybridSystem
    stage: int
    mode: str
    frame: str
    degree: int
    half_degree: int
    blocks: list
    scalars: list
    templates: dict  # location -> Template
    identities: list
    equalities: list
    objective: dict  # block index -> trace weight, or an n x n cost matrix
    eps_min: Fraction = DEFAULT_EPS_MIN

    def block_index(self, name: str) -> int:
        for k, b in enumerate(self.blocks):
            if b.name == name:
                return k
        raise KeyError(name)

    def identity(self, name: str) -> Identity:
        for ident in self.identities:
            if ident.name == name:
                return ident
        raise KeyError(name)

    def dump(self) -> str:
        """Debug text: block sizes then one line per equality."""
        lines = [f"# stage {self.stage}, mode {self.mode}, frame {self.frame}"]
        for k, b in enumerate(self.blocks):
            lines.append(f"block {k} {b.name} size {b.size}")
        for k, s in enumerate(self.scalars):
            low = "free" if s.lower is None else f">= {s.lower}"
            lines.append(f"scalar {k} {s.name} {low}")
        for k, eq in enumerate(self.equalities):
            parts = []
            for key, c in sorted(eq.coeffs.items(), key=lambda kv: (kv[0][0], kv[0][1:])):
                if key[0] == "X":
                    parts.append(f"{c}*({key[1]},{key[2]},{key[3]})")
                else:
                    parts.append(f"{c}*(s{key[1]})")
            lines.append(f"eq {k}: " + " + ".join(parts) + f" = {eq.rhs}")
        return "\n".join(lines) + "\n"


@dataclass
class NumericSolution:
    gram_values: dict  # block name -> float matrix
    template_values: dict  # location -> float vector aligned with Template.monomials
    margins: dict  # scalar name -> float
    status: str = "Feasible"


def gram_polynomial(basis, variables, matrix, constraint=None) -> Polynomial:
    """Exact ``m^T X m * constraint``; ``matrix`` holds Fractions."""
    n = len(basis)
    terms: dict = {}
    for i in range(n):
        for j in range(i, n):
            c = matrix[i][j]
            if c == 0:
                continue
            mono = tuple(a + b for a, b in zip(basis[i], basis[j]))
            terms[mono] = terms.get(mono, 0) + (c if i == j else 2 * c)
    p = Polynomial(variables, terms)
    return p if constraint is None else p * constraint


# -- helpers --------------------------------------------------------------

def _ceil_half(k: int) -> int:
    return (k + 1) // 2


def _shift_to_primed(p: Polynomial, system: HybridSystem) -> Polynomial:
    """phi(x) -> phi(x') over the joint variable list."""
    renamed = p.rename(dict(zip(system.variables, system.primed_variables)))
    return renamed.embed(system.joint_variables)


def _collapse_primes(p: Polynomial, system: HybridSystem) -> Polynomial:
    """rho(x, x') -> rho(x, x) as a polynomial over V (shared frame)."""
    n = len(system.variables)
    terms: dict = {}
    for m, c in p.terms.items():
        mono = tuple(m[i] + m[i + n] for i in range(n))
        terms[mono] = terms.get(mono, 0) + c
    return Polynomial(system.variables, terms)


def _madd(u, v):
    return tuple(a + b for a, b in zip(u, v))


def _prune_free_basis(basis, reach) -> list:
    """Drop monomials m whose square m^2 can only come from the diagonal X[m, m].

    Such a diagonal entry must vanish in every feasible Gram matrix, and with
    it the whole row, so keeping m only forces a singular block.
    """
    basis = list(basis)
    while True:
        pairs = {}
        for i, u in enumerate(basis):
            for v in basis[i + 1:]:
                pairs.setdefault(_madd(u, v), 0)
                pairs[_madd(u, v)] += 1
        drop = [m for m in basis if _madd(m, m) not in reach and _madd(m, m) not in pairs]
        if not drop:
            return basis
        basis = [m for m in basis if m not in drop]


class _Builder:
    def __init__(self, system, d, e, mode, frame, eps_min):
        if d < 0:
            raise AssemblyError("template degree must be >= 0")
        if e < _ceil_half(d):
            raise AssemblyError(f"half-degree e={e} below ceil(d/2)={_ceil_half(d)}")
        if mode not in (PER_LOCATION, INDUCTIVE):
            raise AssemblyError(f"unknown mode {mode!r}")
        if frame not in (SPLIT, SHARED):
            raise AssemblyError(f"unknown frame {frame!r}")
        self.system = system
        self.d, self.e, self.mode, self.frame = d, e, mode, frame
        self.eps_min = Fraction(eps_min)
        self.blocks: list = []
        self.scalars: list = []
        self.templates: dict = {}
        self.identities: list = []

    def add_scalar(self, name, lower=None) -> int:
        self.scalars.append(Scalar(name, lower))
        return len(self.scalars) - 1

    def make_templates(self):
        V = self.system.variables
        monos = tuple(enumerate_monomials(len(V), self.d))
        if not monos:
            raise AssemblyError("empty template")
        if self.mode == INDUCTIVE:
            ids = tuple(self.add_scalar(f"c[*]{m}") for m in monos)
            for loc in self.system.location_ids():
                self.templates[loc] = Template(loc, monos, ids)
        else:
            for loc in self.system.location_ids():
                ids = tuple(self.add_scalar(f"c[{loc}]{m}") for m in monos)
                self.templates[loc] = Template(loc, monos, ids)

    def template_image(self, loc, fn) -> dict:
        """scalar index -> polynomial image of x^alpha under ``fn``."""
        V = self.system.variables
        tpl = self.templates[loc]
        out = {}
        for mono, sid in zip(tpl.monomials, tpl.coeff_ids):
            img = fn(Polynomial(V, {mono: 1}))
            if not img.is_zero:
                out[sid] = img
        return out

    def add_identity(self, name, family, loc, variables, lhs_deg, lhs_terms, constraints, margin=None, transition=None):
        e_id = max(self.e, _ceil_half(lhs_deg))
        top = 2 * e_id
        ident = Identity(name, family, loc, tuple(variables), top, lhs_terms, [], margin, transition)
        nv = len(variables)
        # a variable absent from the left side and every constraint can only
        # enter through a Gram diagonal that nothing cancels, so leave it out
        used = set()
        for p in list(lhs_terms.values()) + list(constraints):
            used |= {i for m in p.terms for i, a in enumerate(m) if a}

        def basis(deg):
            return [m for m in enumerate_monomials(nv, deg) if all(a == 0 or i in used for i, a in enumerate(m))]

        multipliers = []
        for k, c in enumerate(constraints, start=1):
            room = top - c.degree()
            if room < 0:
                log.warning("%s: constraint %d has degree %d > %d; multiplier omitted", name, k, c.degree(), top)
                continue
            multipliers.append((k, basis(room // 2), c))
        reach = set()
        for p in lhs_terms.values():
            reach |= set(p.terms)
        for _, b, c in multipliers:
            for i, u in enumerate(b):
                for v in b[i:]:
                    reach |= {_madd(_madd(u, v), cm) for cm in c.terms}
        if margin is not None:
            reach.add((0,) * nv)
        self._add_block(ident, 0, _prune_free_basis(basis(e_id), reach), None)
        for k, b, c in multipliers:
            self._add_block(ident, k, b, c)
        self.identities.append(ident)

    def _add_block(self, ident, k, basis, constraint):
        prefix = {"init": "M", "discrete": "W", "flow": "P", "unsafe": "Q"}[ident.family]
        blk = GramBlock(f"{ident.name}/{prefix}{k}", ident.name, k, tuple(basis), ident.variables, constraint)
        self.blocks.append(blk)
        ident.block_ids.append(len(self.blocks) - 1)

    def build_identities(self):
        sysm = self.system
        V = sysm.variables
        d = self.d
        # init
        l0 = sysm.initial_location
        self.add_identity("init", "init", l0, V, d, self.template_image(l0, lambda p: p), list(sysm.initial_set))
        # discrete consecution
        for t_idx, tr in enumerate(sysm.transitions):
            name = f"discrete[{tr.source}->{tr.target}#{t_idx}]"
            if self.frame == SPLIT:
                J = sysm.joint_variables
                lhs = self.template_image(tr.target, lambda p: _shift_to_primed(p, sysm))
                cons = [g.embed(J) for g in tr.guard] + list(tr.reset)
                self.add_identity(name, "discrete", tr.target, J, d, lhs, cons, transition=(tr.source, tr.target, t_idx))
            else:
                lhs = self.template_image(tr.target, lambda p: p)
                cons = list(tr.guard) + [_collapse_primes(r, sysm) for r in tr.reset]
                self.add_identity(name, "discrete", tr.target, V, d, lhs, cons, transition=(tr.source, tr.target, t_idx))
        # continuous consecution
        for loc in sysm.locations:
            fdeg = max((f.degree() for f in loc.field), default=0)
            lhs_deg = max(d - 1 + fdeg, 0) if d > 0 else 0
            eps = self.add_scalar(f"eps1[{loc.id}]", self.eps_min)
            lhs = self.template_image(loc.id, lambda p: lie_derivative(p, loc.field))
            self.add_identity(f"flow[{loc.id}]", "flow", loc.id, V, lhs_deg, lhs, list(loc.invariant_set), margin=eps)
        # unsafe separation
        for loc in sysm.locations:
            if loc.unsafe_set is None:
                continue
            eps = self.add_scalar(f"eps2[{loc.id}]", self.eps_min)
            lhs = self.template_image(loc.id, lambda p: -p)
            self.add_identity(f"unsafe[{loc.id}]", "unsafe", loc.id, V, d, lhs, list(loc.unsafe_set), margin=eps)


def _block_contributions(blk: GramBlock) -> dict:
    """monomial -> {(i, j): coefficient} for m^T X m * constraint, i <= j."""
    out: dict = {}
    cterms = blk.constraint.terms.items() if blk.constraint is not None else [((0,) * len(blk.variables), Fraction(1))]
    basis = blk.basis
    for i in range(len(basis)):
        for j in range(i, len(basis)):
            w = 1 if i == j else 2
            prod = tuple(a + b for a, b in zip(basis[i], basis[j]))
            for cm, cc in cterms:
                mono = tuple(a + b for a, b in zip(prod, cm))
                slot = out.setdefault(mono, {})
                slot[(i, j)] = slot.get((i, j), 0) + w * cc
    return out


def _match(ident: Identity, blocks, rhs_poly: Optional[Polynomial], free_block_ids) -> list:
    """Coefficient-matching rows: lhs(c) - sum blocks - margin = rhs_poly."""
    rows: dict = {}

    def row(mono):
        return rows.setdefault(mono, {})

    for sid, img in ident.lhs_terms.items():
        for mono, c in img.terms.items():
            r = row(mono)
            r[("s", sid)] = r.get(("s", sid), 0) + c
    for bid in free_block_ids:
        for mono, entries in _block_contributions(blocks[bid]).items():
            r = row(mono)
            for (i, j), c in entries.items():
                key = ("X", bid, i, j)
                r[key] = r.get(key, 0) - c
    if ident.margin is not None:
        r = row((0,) * len(ident.variables))
        r[("s", ident.margin)] = r.get(("s", ident.margin), 0) - 1
    rhs_terms = rhs_poly.terms if rhs_poly is not None else {}
    for mono in rhs_terms:
        row(mono)
    eqs = []
    for mono in sorted(rows, key=grlex_key):
        coeffs = {k: Fraction(v) for k, v in rows[mono].items() if v != 0}
        rhs = Fraction(rhs_terms.get(mono, 0))
        if not coeffs:
            if rhs != 0:
                raise AssemblyError(
                    f"{ident.name}: monomial {mono} has nonzero target {rhs} but no Gram entry can produce it"
                )
            continue
        eqs.append(Equality(ident.name, mono, coeffs, rhs))
    return eqs


def build_stage1(
    system: HybridSystem,
    d: int,
    e: int,
    mode: str = PER_LOCATION,
    eps_min=DEFAULT_EPS_MIN,
    frame: str = SPLIT,
) -> SdpProblem:
    """Assemble the stage-1 SDP: templates, all multipliers, margins."""
    b = _Builder(system, d, e, mode, frame, eps_min)
    b.make_templates()
    b.build_identities()
    eqs = []
    for ident in b.identities:
        eqs.extend(_match(ident, b.blocks, None, ident.block_ids))
    objective = {k: 1.0 for k in range(len(b.blocks))}
    return SdpProblem(system, 1, mode, frame, d, e, b.blocks, b.scalars, b.templates, b.identities, eqs, objective, b.eps_min)


def template_polynomial(problem: SdpProblem, loc: str, values) -> Polynomial:
    tpl = problem.templates[loc]
    kind = "float" if values and isinstance(values[0], float) else "rational"
    return Polynomial(problem.system.variables, dict(zip(tpl.monomials, values)), kind)


def identity_lhs(problem: SdpProblem, ident: Identity, invariants: dict) -> Polynomial:
    """Left side of an identity for exact invariants {location: Polynomial}."""
    sysm = problem.system
    phi = invariants[ident.location]
    if ident.family == "init":
        return phi
    if ident.family == "discrete":
        return _shift_to_primed(phi, sysm) if problem.frame == SPLIT else phi
    if ident.family == "flow":
        return lie_derivative(phi, sysm.location(ident.location).field)
    return -phi


def residual_targets(problem: SdpProblem, invariants: dict, fixed: dict, margins: dict) -> dict:
    """identity name -> exact polynomial that the index-0 block must represent."""
    out = {}
    for ident in problem.identities:
        r = identity_lhs(problem, ident, invariants)
        for bid in ident.block_ids:
            blk = problem.blocks[bid]
            if blk.index == 0:
                continue
            r = r - blk.polynomial(fixed[blk.name])
        if ident.margin is not None:
            r = r - margins[problem.scalars[ident.margin].name]
        out[ident.name] = r
    return out


def build_refit(stage1: SdpProblem, invariants: dict, margin_floor=0) -> SdpProblem:
    """Stage-1 problem with the invariants fixed to exact polynomials.

    Every Gram block and margin stays free, so the multipliers can adapt to
    the rounded invariant before any of them is rounded in turn.
    """
    scalars = []
    identities = []
    eqs = []
    for ident in stage1.identities:
        margin = None
        if ident.margin is not None:
            scalars.append(Scalar(stage1.scalars[ident.margin].name, Fraction(margin_floor)))
            margin = len(scalars) - 1
        new_ident = Identity(
            ident.name, ident.family, ident.location, ident.variables, ident.degree, {},
            list(ident.block_ids), margin, ident.transition,
        )
        identities.append(new_ident)
        lhs = identity_lhs(stage1, ident, invariants)
        eqs.extend(_match(new_ident, stage1.blocks, -lhs, new_ident.block_ids))
    objective = {k: 1.0 for k in range(len(stage1.blocks))}
    return SdpProblem(
        stage1.system, 1, stage1.mode, stage1.frame, stage1.degree, stage1.half_degree,
        list(stage1.blocks), scalars, {}, identities, eqs, objective, stage1.eps_min,
    )


def build_stage2(stage1: SdpProblem, invariants: dict, fixed: dict, margins: dict) -> SdpProblem:
    """Second-stage SDP over the index-0 blocks only.

    ``invariants`` maps location to rational polynomial, ``fixed`` maps block
    name to a rational matrix (nested lists of Fractions) for every block
    with index >= 1, ``margins`` maps margin scalar name to a Fraction.
    """
    targets = residual_targets(stage1, invariants, fixed, margins)
    blocks = []
    identities = []
    eqs = []
    for ident in stage1.identities:
        zero = [stage1.blocks[b] for b in ident.block_ids if stage1.blocks[b].index == 0][0]
        blocks.append(zero)
        new_ident = Identity(ident.name, ident.family, ident.location, ident.variables, ident.degree, {}, [len(blocks) - 1])
        identities.append(new_ident)
        target = targets[ident.name]
        # rows state: -(m^T X m) = target; flip sign so that m^T X m = target
        for eq in _match(new_ident, blocks, -target, [len(blocks) - 1]):
            eqs.append(Equality(eq.identity, eq.monomial, {k: -v for k, v in eq.coeffs.items()}, -eq.rhs))
    objective = {k: 1.0 for k in range(len(blocks))}
    return SdpProblem(
        stage1.system, 2, stage1.mode, stage1.frame, stage1.degree, stage1.half_degree,
        blocks, [], stage1.templates, identities, eqs, objective, stage1.eps_min,
    )


# -- numeric side ---------------------------------------------------------

def variable_layout(problem: SdpProblem):
    """Offsets of each block's upper triangle and of the scalars in a flat vector."""
    offsets = []
    pos = 0
    for blk in problem.blocks:
        offsets.append(pos)
        pos += blk.size * (blk.size + 1) // 2
    return offsets, pos


def tri_index(i: int, j: int, n: int) -> int:
    if i > j:
        i, j = j, i
    return i * n - i * (i - 1) // 2 + (j - i)


def equality_matrix(problem: SdpProblem):
    """Dense (A over upper-triangle entries, B over scalars, b) in float."""
    offsets, nx = variable_layout(problem)
    m = len(problem.equalities)
    A = np.zeros((m, nx))
    B = np.zeros((m, len(problem.scalars)))
    b = np.zeros(m)
    for r, eq in enumerate(problem.equalities):
        b[r] = float(eq.rhs)
        for key, c in eq.coeffs.items():
            if key[0] == "X":
                _, bid, i, j = key
                A[r, offsets[bid] + tri_index(i, j, problem.blocks[bid].size)] += float(c)
            else:
                B[r, key[1]] += float(c)
    return A, B, b


def extract_solution(problem: SdpProblem, raw) -> NumericSolution:
    """Turn solver output into per-block matrices, template vectors and margins."""
    if raw.status != "Feasible":
        return NumericSolution({}, {}, {}, status=raw.status)
    grams = {}
    for blk, X in zip(problem.blocks, raw.blocks):
        X = np.asarray(X, dtype=float)
        grams[blk.name] = (X + X.T) / 2
    tvals = {}
    for loc, tpl in problem.templates.items():
        tvals[loc] = np.array([raw.scalars[s] for s in tpl.coeff_ids], dtype=float)
    margins = {s.name: float(raw.scalars[k]) for k, s in enumerate(problem.scalars) if s.lower is not None}
    return NumericSolution(grams, tvals, margins)


def float_residuals(problem: SdpProblem, sol: NumericSolution) -> float:
    """Max-norm coefficient residual of every identity rebuilt from floats."""
    worst = 0.0
    vec = {}
    for loc, tpl in problem.templates.items():
        for sid, v in zip(tpl.coeff_ids, sol.template_values[loc]):
            vec[("s", sid)] = v
    for k, s in enumerate(problem.scalars):
        if s.lower is not None:
            vec[("s", k)] = sol.margins[s.name]
    for eq in problem.equalities:
        total = -float(eq.rhs)
        for key, c in eq.coeffs.items():
            if key[0] == "X":
                total += float(c) * sol.gram_values[problem.blocks[key[1]].name][key[2], key[3]]
            else:
                total += float(c) * vec[key]
        worst = max(worst, abs(total))
    return worst


def block_equalities(problem: SdpProblem, bid: int):
    """Rows touching block ``bid`` as ``({(i, j): coeff}, rhs)``; stage-2 only.

    Raises if a row mixes blocks or scalars, since then the block cannot be
    projected on its own.
    """
    rows, rhs = [], []
    for eq in problem.equalities:
        keys = list(eq.coeffs)
        if not any(k[0] == "X" and k[1] == bid for k in keys):
            continue
        if any(k[0] != "X" or k[1] != bid for k in keys):
            raise AssemblyError(f"equality for {eq.identity} couples block {bid} with other unknowns")
        rows.append({(k[2], k[3]): c for k, c in eq.coeffs.items()})
        rhs.append(eq.rhs)
    return rows, rhs


def block_operator(rows, n: int):
    """Float operator (m, n, n) with symmetric slices: <A_k, X> = sum rows[k][(i,j)] X_ij."""
    A = np.zeros((len(rows), n, n))
    for r, row in enumerate(rows):
        for (i, j), c in row.items():
            if i == j:
                A[r, i, i] += float(c)
            else:
                A[r, i, j] += float(c) / 2
                A[r, j, i] += float(c) / 2
    return A
