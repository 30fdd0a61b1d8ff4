"""End-to-end invariant generation: SDP, rational recovery, exact check.

Per degree d:

1. rescale the system so every set sits roughly in [-1, 1]^n (exact),
2. solve the stage-1 SDP on its central path,
3. round the invariant coefficients with a common denominator <= D,
4. re-solve for all multipliers with the rounded invariant fixed,
5. round margins and constrained multipliers, solve stage 2 for the free
   SOS terms, refine them by Gauss-Newton and project them exactly,
6. map the certificate back to the original coordinates and verify it.

Step 3 walks down a tolerance ladder tau, tau/10, ... for as long as a
denominator <= D exists; the first rung that verifies wins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .certify import Certificate, Multiplier, VerificationReport, verify
from .model import HybridSystem
from .poly import Polynomial, grlex_key
from .recover import (
    NoRationalWithinTolerance,
    NotDiagonallyDominant,
    ProjectionLeavesCone,
    RationalMatrix,
    RecoveryError,
    RecoverySettings,
    diophantine_recover,
    exact_psd_check,
    gauss_newton_refine,
    project_to_rational_psd,
    round_block,
    round_diagonal_block,
)
from .scaling import AffineScaling, choose_scaling, rescale_system, substitute
from .sdp import FEASIBLE, INFEASIBLE, SolverSettings, solve
from .sosgen import (
    DEFAULT_EPS_MIN,
    PER_LOCATION,
    SPLIT,
    AssemblyError,
    SdpProblem,
    block_equalities,
    build_refit,
    build_stage1,
    build_stage2,
    extract_solution,
    template_polynomial,
)

log = logging.getLogger(__name__)

CERTIFIED = "certified"
NOT_FOUND = "not-found"
RECOVERY_FAILED = "recovery-failed"


@dataclass
class RunConfig:
    degree: int = 2
    denom_bound: int = 1000
    half_degree: Optional[int] = None  # e; default from the system, see default_half_degree
    tolerance: float = 1e-2
    mode: str = PER_LOCATION
    sweep: Optional[tuple] = None  # (first, last) degree, inclusive
    eps_min: Fraction = DEFAULT_EPS_MIN
    center_gap: float = 0.1
    gram_grid: int = 10**8
    rescale: bool = True
    solver: SolverSettings = field(default_factory=SolverSettings)
    recovery: RecoverySettings = field(default_factory=RecoverySettings)

    def degrees(self) -> list:
        if self.sweep is None:
            return [self.degree]
        lo, hi = self.sweep
        return list(range(lo, hi + 1))


@dataclass
class GenerateResult:
    status: str
    certificate: Optional[Certificate] = None
    report: Optional[VerificationReport] = None
    degree: Optional[int] = None
    half_degree: Optional[int] = None
    messages: list = field(default_factory=list)


def max_constraint_degree(system: HybridSystem) -> int:
    polys = list(system.initial_set)
    for loc in system.locations:
        polys += list(loc.invariant_set)
        if loc.unsafe_set is not None:
            polys += list(loc.unsafe_set)
    for tr in system.transitions:
        polys += list(tr.guard) + list(tr.reset)
    return max((p.degree() for p in polys), default=0)


def default_half_degree(system: HybridSystem, d: int) -> int:
    """e with 2e = max(2*ceil(d/2), largest constraint degree rounded up to even)."""
    return max(math.ceil(d / 2), math.ceil(max_constraint_degree(system) / 2))


def generate(system: HybridSystem, config: RunConfig) -> GenerateResult:
    """Try each degree of the sweep in turn; stop at the first numeric success."""
    messages = []
    for d in config.degrees():
        e = config.half_degree if config.half_degree is not None else default_half_degree(system, d)
        if e < math.ceil(d / 2):
            e = math.ceil(d / 2)
        res = generate_at(system, d, e, config)
        messages.extend(res.messages)
        if res.status == NOT_FOUND:
            continue
        res.messages = messages
        return res
    return GenerateResult(NOT_FOUND, messages=messages)


def _solver_settings(config: RunConfig) -> SolverSettings:
    s = config.solver
    return SolverSettings(s.feas_tol, s.duality_gap_tol, s.max_iters, s.step_fraction, config.center_gap, s.log_stream)


def generate_at(system: HybridSystem, d: int, e: int, config: RunConfig) -> GenerateResult:
    msgs = []
    scaling = choose_scaling(system) if config.rescale else AffineScaling(
        (Fraction(0),) * len(system.variables), (Fraction(1),) * len(system.variables)
    )
    work = rescale_system(system, scaling) if not scaling.is_identity else system
    try:
        stage1 = build_stage1(work, d, e, config.mode, config.eps_min, SPLIT)
    except AssemblyError as err:
        msgs.append(f"d={d}, 2e={2 * e}: cannot assemble: {err}")
        return GenerateResult(NOT_FOUND, degree=d, half_degree=e, messages=msgs)
    settings = _solver_settings(config)
    raw, st = solve(stage1, settings)
    log.info("d=%d 2e=%d stage 1: %s after %d iterations %s", d, 2 * e, st.status, st.iterations, st.message)
    if st.status != FEASIBLE:
        why = "infeasible" if st.status == INFEASIBLE else f"solver stopped: {st.status}"
        msgs.append(f"no polynomial invariant of degree <= {d} found with 2e={2 * e} ({why})")
        return GenerateResult(NOT_FOUND, degree=d, half_degree=e, messages=msgs)
    msgs.append(f"d={d}, 2e={2 * e}: numeric invariant found ({st.iterations} iterations)")

    sol = extract_solution(stage1, raw)
    top = max(float(np.max(np.abs(v))) for v in sol.template_values.values())
    if top <= 0:
        msgs.append("numeric invariant is identically zero")
        return GenerateResult(RECOVERY_FAILED, degree=d, half_degree=e, messages=msgs)
    # round in the original coordinates so the emitted invariant keeps q <= D
    template_values = {}
    inv_map = scaling.inverse()
    for loc, tpl in stage1.templates.items():
        phi_u = template_polynomial(stage1, loc, [float(v) for v in sol.template_values[loc]])
        phi_x = substitute(phi_u, inv_map) if not scaling.is_identity else phi_u
        template_values[loc] = np.array([float(phi_x.coefficient(m)) for m in tpl.monomials])
    top = max(float(np.max(np.abs(v))) for v in template_values.values())
    template_values = {loc: v / top for loc, v in template_values.items()}

    last_error = "no tolerance rung attempted"
    for D in (config.denom_bound, config.denom_bound * 10):
        tau = config.tolerance
        while True:
            try:
                originals = _round_invariants(stage1, template_values, D, tau)
            except NoRationalWithinTolerance:
                if tau == config.tolerance:
                    last_error = f"D={D}: no common denominator within tau={tau:g}"
                break
            invariants = {loc: substitute(p, scaling) for loc, p in originals.items()} if not scaling.is_identity else originals
            try:
                cert_u = _recover_certificate(stage1, invariants, D, tau, config)
            except (RecoveryError, AssemblyError) as err:
                last_error = f"D={D}, tau={tau:g}: {err}"
                log.info("recovery attempt failed: %s", last_error)
                tau /= 10
                continue
            cert = pull_back(cert_u, scaling, system)
            report = verify(system, cert)
            if report.certified:
                msgs.append(f"exact certificate recovered with D={D}, tau={tau:g}")
                return GenerateResult(CERTIFIED, cert, report, d, e, msgs)
            last_error = f"D={D}, tau={tau:g}: exact check rejected ({report.reason})"
            log.info("%s", last_error)
            tau /= 10
        if D == config.denom_bound:
            msgs.append(f"recovery failed with D={D}; retrying with D={10 * D}")
    msgs.append(f"recovery failed: {last_error}")
    return GenerateResult(RECOVERY_FAILED, degree=d, half_degree=e, messages=msgs)


def _round_invariants(stage1: SdpProblem, values: dict, D: int, tau: float) -> dict:
    # one common denominator over the coefficients of every location
    locs = list(stage1.templates)
    flat = np.concatenate([np.asarray(values[loc], dtype=float) for loc in locs])
    fr, _ = diophantine_recover(flat, D, tau)
    out = {}
    pos = 0
    for loc in locs:
        k = len(stage1.templates[loc].monomials)
        out[loc] = template_polynomial(stage1, loc, fr[pos:pos + k])
        pos += k
    return out


def _round_multiplier(X, settings: RecoverySettings, grid: int) -> RationalMatrix:
    try:
        R = round_diagonal_block(X, settings)
        if exact_psd_check(R)[0] and np.max(np.abs(R.to_float() - X), initial=0.0) <= settings.tolerance:
            return R
    except (NotDiagonallyDominant, NoRationalWithinTolerance):
        pass
    R = round_block(X, grid)
    if not exact_psd_check(R)[0]:
        raise ProjectionLeavesCone("rounded multiplier block is not PSD")
    return R


def _recover_certificate(stage1: SdpProblem, invariants: dict, D: int, tau: float, config: RunConfig) -> Certificate:
    settings = _solver_settings(config)
    rs = config.recovery
    rsettings = RecoverySettings(D, tau, rs.offdiag_tol, rs.gn_max_iters, rs.gn_target, rs.rank_tol)

    refit = build_refit(stage1, invariants)
    raw, st = solve(refit, settings)
    if st.status != FEASIBLE:
        raise RecoveryError(f"rounded invariant admits no multipliers ({st.status})")
    sol = extract_solution(refit, raw)

    margins = {}
    for name, v in sol.margins.items():
        if v <= 0:
            raise RecoveryError(f"margin {name} is not positive")
        fr, _ = diophantine_recover([v], D, min(tau, v / 2))
        margins[name] = fr[0]

    fixed = {}
    for blk in stage1.blocks:
        if blk.index:
            fixed[blk.name] = _round_multiplier(sol.gram_values[blk.name], rsettings, config.gram_grid).rows

    stage2 = build_stage2(stage1, invariants, fixed, margins)
    raw2, st2 = solve(stage2, settings)
    if st2.status != FEASIBLE:
        raise RecoveryError(f"stage 2 {st2.status}")
    refined = gauss_newton_refine(stage2, raw2.blocks, rsettings)
    free = {}
    for bid, (blk, X) in enumerate(zip(stage2.blocks, refined)):
        rows, rhs = block_equalities(stage2, bid)
        free[blk.name] = project_to_rational_psd(X, rows, rhs, rsettings, config.gram_grid)

    mults = []
    for blk in stage1.blocks:
        gram = free[blk.name] if blk.index == 0 else RationalMatrix.from_rows(fixed[blk.name])
        mults.append(Multiplier(blk.identity, blk.index, tuple(blk.basis), gram))
    margin_by_identity = {}
    for ident in stage1.identities:
        if ident.margin is not None:
            margin_by_identity[ident.name] = margins[stage1.scalars[ident.margin].name]
    return Certificate(
        stage1.mode, stage1.frame, tuple(stage1.system.variables), dict(invariants), mults, margin_by_identity, ""
    )


# -- back to the original coordinates -------------------------------------------

def _monomial_poly(variables, mono) -> Polynomial:
    return Polynomial(variables, {tuple(mono): 1})


def pull_back(cert: Certificate, scaling: AffineScaling, system: HybridSystem) -> Certificate:
    """Rewrite a certificate found in u (x = c + s*u) over x, exactly."""
    V = tuple(system.variables)
    if scaling.is_identity:
        return Certificate(cert.mode, cert.frame, V, dict(cert.invariants), list(cert.multipliers), dict(cert.margins), system.digest())
    inv = scaling.inverse()
    invariants = {loc: substitute(p, inv) for loc, p in cert.invariants.items()}
    mults = []
    for m in cert.multipliers:
        nv = len(m.basis[0]) if m.basis else len(V)
        joint = nv == 2 * len(V)
        variables = V + tuple(v + "'" for v in V) if joint else V
        t = inv.doubled() if joint else inv
        images = [substitute(_monomial_poly(variables, b), t) for b in m.basis]
        support = sorted({mono for p in images for mono in p.terms}, key=grlex_key)
        T = [[p.terms.get(mono, Fraction(0)) for mono in support] for p in images]
        gram = m.gram.congruence(T) if m.basis else m.gram
        mults.append(Multiplier(m.identity, m.index, tuple(support), gram))
    return Certificate(cert.mode, cert.frame, V, invariants, mults, dict(cert.margins), system.digest())
