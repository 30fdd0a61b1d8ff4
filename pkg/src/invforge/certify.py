"""Exact certificate checking and the certificate text format.

The checker rebuilds every identity from the hybrid system and the rational
data in the certificate alone; it shares no code with the SDP assembly and
never touches floating point.  A certificate is accepted when

* every identity ``lhs - sum_k sigma_k * c_k - margin`` is the zero
  polynomial, with ``sigma_k = m^T G m``,
* every Gram matrix G passes the exact LDL^T test,
* every margin is strictly positive.

Identities, per location l, transition t and initial location l0::

    init            phi_{l0}                  constraints: initial set
    discrete[t]     phi_target(x')            constraints: guard(x), reset(x, x')
    flow[l]         Lie(phi_l, f_l)           constraints: location domain, + margin
    unsafe[l]       -phi_l                    constraints: unsafe set, + margin

In the ``shared`` frame the discrete identity is written over x alone, with
the reset's primed variables read as the unprimed ones.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .model import HybridSystem
from .poly import Polynomial, PolynomialError, PolySyntaxError, format_poly, lie_derivative, parse_poly
from .recover import RationalMatrix, exact_psd_check

FORMAT_HEADER = "invforge-certificate"
FORMAT_VERSION = 1

PER_LOCATION = "per-location"
INDUCTIVE = "inductive"
SPLIT = "split"
SHARED = "shared"

FAMILIES = ("init", "discrete", "flow", "unsafe")

CERTIFIED = "Certified"
REJECTED = "Rejected"


class CertificateError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Multiplier:
    identity: str
    index: int  # 0: the free SOS term; k >= 1: multiplies the k-th constraint
    basis: tuple  # exponent tuples over the identity's variables
    gram: RationalMatrix


@dataclass
class Certificate:
    mode: str
    frame: str
    variables: tuple
    invariants: dict  # location -> rational Polynomial over ``variables``
    multipliers: list
    margins: dict  # identity name -> Fraction
    system_hash: str = ""

    def multipliers_for(self, identity: str) -> list:
        return [m for m in self.multipliers if m.identity == identity]

    def identity_names(self) -> list:
        seen = []
        for m in self.multipliers:
            if m.identity not in seen:
                seen.append(m.identity)
        for name in self.margins:
            if name not in seen:
                seen.append(name)
        return seen


@dataclass
class IdentityStatus:
    name: str
    exact_zero: bool
    residual: Optional[Polynomial] = None
    problems: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.exact_zero and not self.problems


@dataclass
class MatrixStatus:
    identity: str
    index: int
    size: int
    psd: bool
    witness: Optional[list] = None


@dataclass
class VerificationReport:
    identities: list
    matrices: list
    problems: list  # certificate-level failures
    warnings: list
    verdict: str = REJECTED
    reason: str = ""

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED

    def summary(self) -> str:
        lines = []
        for w in self.warnings:
            lines.append(f"warning: {w}")
        for st in self.identities:
            tag = "ok" if st.ok else "FAIL"
            lines.append(f"{tag:4s} {st.name}: residual {'0' if st.exact_zero else format_poly(st.residual)}")
            for p in st.problems:
                lines.append(f"     {p}")
        bad = [m for m in self.matrices if not m.psd]
        lines.append(f"gram matrices: {len(self.matrices)} checked, {len(bad)} not PSD")
        for m in bad:
            lines.append(f"     {m.identity} block {m.index} (size {m.size}) witness z = {_fmt_vec(m.witness)}")
        for p in self.problems:
            lines.append(f"FAIL {p}")
        verdict = self.verdict if self.certified else f"{self.verdict}({self.reason})"
        lines.append(f"verdict: {verdict}")
        return "\n".join(lines)


def _fmt_vec(v) -> str:
    return "(" + ", ".join(str(x) for x in (v or [])) + ")"


# -- identity construction ----------------------------------------------------

@dataclass
class _Slot:
    name: str
    family: str
    location: str
    variables: tuple
    lhs: Polynomial
    constraints: list
    needs_margin: bool


def _primed_joint(system: HybridSystem):
    V = tuple(system.variables)
    P = tuple(v + "'" for v in V)
    return V, P, V + P


def _read_primes_as_current(p: Polynomial, system: HybridSystem) -> Polynomial:
    V, P, J = _primed_joint(system)
    n = len(V)
    out = Polynomial.zero(V)
    for m, c in p.terms.items():
        out = out + Polynomial(V, {tuple(m[i] + m[i + n] for i in range(n)): c})
    return out


def identity_slots(system: HybridSystem, invariants: dict, frame: str) -> list:
    """The list of identities a certificate for ``system`` has to satisfy."""
    V, P, J = _primed_joint(system)
    slots = []
    l0 = system.initial_location
    slots.append(_Slot("init", "init", l0, V, invariants[l0], list(system.initial_set), False))
    for k, tr in enumerate(system.transitions):
        name = f"discrete[{tr.source}->{tr.target}#{k}]"
        phi = invariants[tr.target]
        if frame == SPLIT:
            lhs = phi.rename(dict(zip(V, P))).embed(J)
            cons = [g.embed(J) for g in tr.guard] + [r.embed(J) for r in tr.reset]
            slots.append(_Slot(name, "discrete", tr.target, J, lhs, cons, False))
        else:
            cons = list(tr.guard) + [_read_primes_as_current(r, system) for r in tr.reset]
            slots.append(_Slot(name, "discrete", tr.target, V, phi, cons, False))
    for loc in system.locations:
        lhs = lie_derivative(invariants[loc.id], loc.field)
        slots.append(_Slot(f"flow[{loc.id}]", "flow", loc.id, V, lhs, list(loc.invariant_set), True))
    for loc in system.locations:
        if loc.unsafe_set is not None:
            slots.append(_Slot(f"unsafe[{loc.id}]", "unsafe", loc.id, V, -invariants[loc.id], list(loc.unsafe_set), True))
    return slots


def gram_to_polynomial(variables, basis, gram: RationalMatrix) -> Polynomial:
    """m^T G m computed exactly."""
    n = len(basis)
    terms: dict = {}
    for i in range(n):
        for j in range(n):
            c = gram[i, j]
            if c:
                mono = tuple(a + b for a, b in zip(basis[i], basis[j]))
                terms[mono] = terms.get(mono, 0) + c
    return Polynomial(variables, terms)


def verify_sos_identity(target: Polynomial, squares) -> bool:
    """True iff target == sum w * h^2 exactly, all weights nonnegative."""
    total = Polynomial.zero(target.variables)
    for w, h in squares:
        w = Fraction(w)
        if w < 0:
            return False
        total = total + h * h * w
    return total == target


def verify(system: HybridSystem, cert: Certificate) -> VerificationReport:
    """Exact check of every identity and Gram matrix; never raises on bad data."""
    report = VerificationReport([], [], [], [])
    try:
        _verify_into(system, cert, report)
    except (PolynomialError, ValueError, KeyError, IndexError) as err:
        report.problems.append(f"malformed certificate: {err}")
    failed = report.problems or any(not s.ok for s in report.identities) or any(not m.psd for m in report.matrices)
    if failed:
        report.verdict = REJECTED
        if report.problems:
            report.reason = report.problems[0]
        else:
            bad = [s for s in report.identities if not s.ok]
            if bad:
                st = bad[0]
                report.reason = st.problems[0] if st.problems else f"nonzero residual in {st.name}"
            else:
                m = next(m for m in report.matrices if not m.psd)
                report.reason = f"Gram block {m.index} of {m.identity} is not PSD"
    else:
        report.verdict = CERTIFIED
    return report


def _verify_into(system: HybridSystem, cert: Certificate, report: VerificationReport) -> None:
    V = tuple(system.variables)
    if tuple(cert.variables) != V:
        report.problems.append(f"variable lists differ: system {V}, certificate {tuple(cert.variables)}")
        return
    if cert.system_hash and cert.system_hash != system.digest():
        report.warnings.append("system hash differs from the one recorded in the certificate")
    if cert.frame not in (SPLIT, SHARED):
        report.problems.append(f"unknown discrete frame {cert.frame!r}")
        return
    if cert.frame == SHARED:
        report.warnings.append(
            "shared frame: discrete identities read the reset over the current variables; "
            "this is weaker than the split frame over (x, x')"
        )
    if cert.mode not in (PER_LOCATION, INDUCTIVE):
        report.problems.append(f"unknown mode {cert.mode!r}")
        return
    missing = [l for l in system.location_ids() if l not in cert.invariants]
    if missing:
        report.problems.append(f"no invariant for location(s) {', '.join(missing)}")
        return
    invariants = {l: cert.invariants[l].embed(V) for l in system.location_ids()}
    if cert.mode == INDUCTIVE and len({invariants[l] for l in invariants}) > 1:
        report.problems.append("inductive mode requires one invariant shared by all locations")

    slots = identity_slots(system, invariants, cert.frame)
    known = {s.name for s in slots}
    for name in cert.identity_names():
        if name not in known:
            report.problems.append(f"certificate mentions unknown identity {name!r}")

    for slot in slots:
        st = IdentityStatus(slot.name, False)
        residual = slot.lhs
        seen = set()
        for mult in cert.multipliers_for(slot.name):
            if mult.index in seen:
                st.problems.append(f"duplicate multiplier {mult.index}")
                continue
            seen.add(mult.index)
            if not 0 <= mult.index <= len(slot.constraints):
                st.problems.append(f"multiplier index {mult.index} out of range 0..{len(slot.constraints)}")
                continue
            if mult.gram.size != len(mult.basis) or any(len(b) != len(slot.variables) for b in mult.basis):
                st.problems.append(f"multiplier {mult.index}: basis does not match its Gram matrix")
                continue
            if not mult.gram.is_symmetric():
                st.problems.append(f"multiplier {mult.index}: Gram matrix is not symmetric")
                continue
            ok, witness = exact_psd_check(mult.gram)
            report.matrices.append(MatrixStatus(slot.name, mult.index, mult.gram.size, ok, None if ok else witness))
            sigma = gram_to_polynomial(slot.variables, mult.basis, mult.gram)
            if mult.index:
                sigma = sigma * slot.constraints[mult.index - 1]
            residual = residual - sigma
        if slot.needs_margin:
            eps = cert.margins.get(slot.name)
            if eps is None:
                st.problems.append("margin missing")
            else:
                if eps <= 0:
                    st.problems.append(f"margin not positive ({eps})")
                residual = residual - Polynomial.constant(slot.variables, eps)
        elif slot.name in cert.margins:
            st.problems.append("margin given for an identity that takes none")
        st.exact_zero = residual.is_zero
        st.residual = residual
        report.identities.append(st)


# -- text format ---------------------------------------------------------------

def _frac(x: Fraction) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def _monomial_text(mono, variables) -> str:
    parts = []
    for v, a in zip(variables, mono):
        if a == 1:
            parts.append(v)
        elif a > 1:
            parts.append(f"{v}^{a}")
    return "*".join(parts) if parts else "1"


def identity_variables(cert_vars, frame: str, identity: str) -> tuple:
    V = tuple(cert_vars)
    if identity.startswith("discrete[") and frame == SPLIT:
        return V + tuple(v + "'" for v in V)
    return V


def _poly_text(p: Polynomial) -> str:
    """Polynomial with every coefficient as p/q, terms in graded order."""
    if p.is_zero:
        return "0/1"
    out = []
    for mono in sorted(p.terms, key=lambda m: (sum(m), tuple(-a for a in m))):
        c = p.terms[mono]
        sign = "-" if c < 0 else "+"
        mtext = _monomial_text(mono, p.variables)
        body = _frac(abs(c)) if mtext == "1" else f"{_frac(abs(c))}*{mtext}"
        out.append((sign, body))
    first_sign, first = out[0]
    text = ("-" if first_sign == "-" else "") + first
    for sign, body in out[1:]:
        text += f" {sign} {body}"
    return text


def serialize_certificate(cert: Certificate) -> str:
    lines = [
        f"{FORMAT_HEADER} {FORMAT_VERSION}",
        f"system {cert.system_hash or '-'}",
        f"mode {cert.mode}",
        f"frame {cert.frame}",
        "vars " + " ".join(cert.variables),
        "",
    ]
    for loc in sorted(cert.invariants):
        lines.append(f"invariant {loc} = {_poly_text(cert.invariants[loc])}")
    names = cert.identity_names()
    for family in FAMILIES:
        fam = [n for n in names if n.split("[")[0] == family]
        if not fam:
            continue
        lines.append("")
        lines.append(f"section {family}")
        for name in fam:
            lines.append(f"identity {name}")
            if name in cert.margins:
                lines.append(f"  margin {_frac(cert.margins[name])}")
            ivars = identity_variables(cert.variables, cert.frame, name)
            for mult in sorted(cert.multipliers_for(name), key=lambda m: m.index):
                lines.append(f"  block {mult.index} size {mult.gram.size}")
                lines.append("    basis " + " ; ".join(_monomial_text(b, ivars) for b in mult.basis))
                for row in mult.gram.rows:
                    lines.append("    row " + " ".join(_frac(v) for v in row))
    lines.append("")
    lines.append("end")
    return "\n".join(lines) + "\n"


_FRACTION = re.compile(r"^[+-]?\d+(/\d+)?$")


def _parse_fraction(tok: str, lineno: int) -> Fraction:
    if not _FRACTION.match(tok):
        raise CertificateError(f"expected a rational p/q, got {tok!r}", lineno)
    f = Fraction(tok)
    return f


def _parse_monomial(text: str, variables, lineno: int):
    text = text.strip()
    if text == "1":
        return (0,) * len(variables)
    try:
        p = parse_poly(text, variables)
    except (PolySyntaxError, PolynomialError) as err:
        raise CertificateError(f"bad basis monomial {text!r}: {err}", lineno)
    if len(p.terms) != 1 or next(iter(p.terms.values())) != 1:
        raise CertificateError(f"basis entry {text!r} is not a monomial", lineno)
    return next(iter(p.terms))


def parse_certificate(text: str) -> Certificate:
    lines = text.splitlines()
    pos = 0

    def content():
        nonlocal pos
        while pos < len(lines):
            raw = lines[pos].strip()
            raw = "" if raw.startswith("#") else raw
            pos += 1
            if raw:
                return raw, pos
        return None, pos

    head, ln = content()
    if head is None:
        raise CertificateError("empty certificate", 1)
    parts = head.split()
    if len(parts) != 2 or parts[0] != FORMAT_HEADER:
        raise CertificateError(f"expected header '{FORMAT_HEADER} <version>'", ln)
    if parts[1] != str(FORMAT_VERSION):
        raise CertificateError(f"unsupported format version {parts[1]}", ln)

    header = {}
    for key in ("system", "mode", "frame", "vars"):
        line, ln = content()
        if line is None or not line.startswith(key + " ") and line != key:
            raise CertificateError(f"expected '{key}' line", ln)
        header[key] = line[len(key):].strip()
    variables = tuple(header["vars"].split())
    if not variables:
        raise CertificateError("no variables declared", ln)
    mode, frame = header["mode"], header["frame"]
    if mode not in (PER_LOCATION, INDUCTIVE):
        raise CertificateError(f"unknown mode {mode!r}", ln)
    if frame not in (SPLIT, SHARED):
        raise CertificateError(f"unknown frame {frame!r}", ln)
    system_hash = "" if header["system"] == "-" else header["system"]

    invariants: dict = {}
    multipliers: list = []
    margins: dict = {}
    family = None
    identity = None
    ended = False
    while True:
        line, ln = content()
        if line is None:
            break
        word, _, rest = line.partition(" ")
        if ended:
            raise CertificateError("content after 'end'", ln)
        if word == "end":
            ended = True
        elif word == "invariant":
            loc, eq, body = rest.partition("=")
            loc = loc.strip()
            if not eq or not loc:
                raise CertificateError("expected 'invariant <location> = <polynomial>'", ln)
            if loc in invariants:
                raise CertificateError(f"duplicate invariant for {loc}", ln)
            for tok in re.findall(r"[0-9./]+", body):
                if "." in tok:
                    raise CertificateError(f"decimal {tok!r} in invariant; use p/q", ln)
            try:
                invariants[loc] = parse_poly(body, variables)
            except (PolySyntaxError, PolynomialError) as err:
                raise CertificateError(f"bad invariant polynomial: {err}", ln)
        elif word == "section":
            if rest not in FAMILIES:
                raise CertificateError(f"unknown section {rest!r}", ln)
            family = rest
            identity = None
        elif word == "identity":
            if family is None:
                raise CertificateError("identity outside a section", ln)
            if rest.split("[")[0] != family:
                raise CertificateError(f"identity {rest!r} does not belong to section {family}", ln)
            identity = rest
        elif word == "margin":
            if identity is None:
                raise CertificateError("margin outside an identity", ln)
            if identity in margins:
                raise CertificateError("duplicate margin", ln)
            margins[identity] = _parse_fraction(rest, ln)
        elif word == "block":
            if identity is None:
                raise CertificateError("block outside an identity", ln)
            m = re.fullmatch(r"(\d+) size (\d+)", rest)
            if not m:
                raise CertificateError("expected 'block <index> size <n>'", ln)
            index, size = int(m.group(1)), int(m.group(2))
            ivars = identity_variables(variables, frame, identity)
            bline, bln = content()
            if bline is None or not bline.startswith("basis"):
                raise CertificateError("expected 'basis' line", bln)
            basis = tuple(_parse_monomial(t, ivars, bln) for t in bline[len("basis"):].split(";")) if size else ()
            if len(basis) != size:
                raise CertificateError(f"basis has {len(basis)} entries, block size is {size}", bln)
            rows = []
            for _ in range(size):
                rline, rln = content()
                if rline is None or not rline.startswith("row "):
                    raise CertificateError("expected 'row' line", rln)
                vals = [_parse_fraction(t, rln) for t in rline[4:].split()]
                if len(vals) != size:
                    raise CertificateError(f"row has {len(vals)} entries, expected {size}", rln)
                rows.append(vals)
            multipliers.append(Multiplier(identity, index, basis, RationalMatrix.from_rows(rows)))
        else:
            raise CertificateError(f"unexpected line {line!r}", ln)
    if not ended:
        raise CertificateError("missing 'end' (truncated certificate?)", len(lines))
    if not invariants:
        raise CertificateError("no invariants", len(lines))
    return Certificate(mode, frame, variables, invariants, multipliers, margins, system_hash)


# -- human-readable dump ---------------------------------------------------------

def explain(cert: Certificate) -> str:
    """Invariants, margins, block inventory and exact PSD pivots."""
    var_list = ",".join(cert.variables)
    lines = [f"mode {cert.mode}, discrete frame {cert.frame}, variables {var_list}"]
    if cert.system_hash:
        lines.append(f"system digest {cert.system_hash}")
    for loc in sorted(cert.invariants):
        lines.append(f"location {loc}: φ̃({var_list}) = {format_poly(cert.invariants[loc])}")
    if cert.margins:
        lines.append("margins:")
        for name, eps in cert.margins.items():
            lines.append(f"  {name}: {eps}")
    lines.append(f"gram blocks: {len(cert.multipliers)}")
    for mult in cert.multipliers:
        ok, info = exact_psd_check(mult.gram)
        if ok:
            detail = "PSD, pivots " + _fmt_vec(info)
        else:
            detail = "NOT PSD, witness z = " + _fmt_vec(info)
        lines.append(f"  {mult.identity} block {mult.index}: size {mult.gram.size}, {detail}")
    return "\n".join(lines) + "\n"
