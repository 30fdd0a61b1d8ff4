"""Polynomial hybrid automata and their text format.

A system file is line oriented::

    vars x1 x2
    location l1
      field x2 ; -x1 + x2
      invariant (x1+1)*(2-x1) >= 0 ; (x2+1)*(2-x2) >= 0
      unsafe 0.16 - (x1+1)^2 - (x2+1)^2 >= 0
    transition l1 -> l2
      guard (x2-1.6)*(2-x2) >= 0
      reset 0.01 - (x1'-2.6)^2 - (x2'-2.8)^2 >= 0
    init l1
      set 0.25 - (x1-1.5)^2 - x2^2 >= 0

Constraints are ``lhs >= rhs``, ``lhs <= rhs`` or ``lhs = rhs`` and are
stored as polynomials that must be nonnegative; an equality becomes the pair
``lhs - rhs`` and ``rhs - lhs``.  Primed names are only legal in ``reset``.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .poly import Polynomial, PolySyntaxError, format_poly, parse_poly


class ModelError(ValueError):
    """Structural or syntax problem in a hybrid system description."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class SemialgebraicSet:
    """Conjunction of ``p >= 0`` over the listed polynomials."""

    constraints: tuple = ()

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)

    def contains(self, point, slack: float = 0.0) -> bool:
        return all(float(p.to_float().evaluate(point)) >= -slack for p in self.constraints)


@dataclass(frozen=True)
class ResetRelation:
    """Conjunction of ``p(x, x') >= 0`` over current and primed variables."""

    constraints: tuple = ()

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)


@dataclass(frozen=True)
class Location:
    id: str
    field: tuple
    invariant_set: SemialgebraicSet = SemialgebraicSet()
    unsafe_set: Optional[SemialgebraicSet] = None


@dataclass(frozen=True)
class Transition:
    source: str
    target: str
    guard: SemialgebraicSet = SemialgebraicSet()
    reset: ResetRelation = ResetRelation()


@dataclass(frozen=True)
class HybridSystem:
    variables: tuple
    locations: tuple
    transitions: tuple
    initial_location: str
    initial_set: SemialgebraicSet

    @property
    def primed_variables(self) -> tuple:
        return tuple(v + "'" for v in self.variables)

    @property
    def joint_variables(self) -> tuple:
        return self.variables + self.primed_variables

    def location(self, name: str) -> Location:
        for loc in self.locations:
            if loc.id == name:
                return loc
        raise KeyError(name)

    def location_ids(self) -> list:
        return [loc.id for loc in self.locations]

    def digest(self) -> str:
        """SHA-256 of the canonical serialization."""
        return hashlib.sha256(serialize_system(self).encode()).hexdigest()


# -- parsing -----------------------------------------------------------------

_REL = re.compile(r"(>=|<=|=)")


def _strip_comment(line: str) -> str:
    i = line.find("#")
    return line if i < 0 else line[:i]


def _parse_expr(text: str, variables, lineno: int, offset: int) -> Polynomial:
    try:
        return parse_poly(text, variables)
    except PolySyntaxError as exc:
        raise ModelError(exc.message, lineno, offset + exc.column) from None


def _parse_constraints(text: str, variables, lineno: int, offset: int) -> list:
    out = []
    pos = 0
    for chunk in text.split(";"):
        start = offset + pos
        pos += len(chunk) + 1
        if not chunk.strip():
            raise ModelError("empty constraint", lineno, start + 1)
        parts = _REL.split(chunk)
        if len(parts) != 3:
            raise ModelError("constraint needs exactly one of >=, <=, =", lineno, start + 1)
        lhs_text, rel, rhs_text = parts
        lhs = _parse_expr(lhs_text, variables, lineno, start)
        rhs = _parse_expr(rhs_text, variables, lineno, start + len(lhs_text) + len(rel))
        if rel == ">=":
            out.append(lhs - rhs)
        elif rel == "<=":
            out.append(rhs - lhs)
        else:
            out.extend([lhs - rhs, rhs - lhs])
    return out


def parse_system(text: str) -> HybridSystem:
    """Parse and structurally validate a system description."""
    variables: tuple | None = None
    locations: dict = {}
    order: list = []
    transitions: list = []
    init_loc = None
    init_set: list = []
    current = None  # ("location", name) | ("transition", index) | ("init",)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        stripped = line.strip()
        keyword, _, rest = stripped.partition(" ")
        rest_offset = indent + len(keyword) + 1 + (len(rest) - len(rest.lstrip()))
        rest = rest.strip()

        if keyword == "vars":
            if variables is not None:
                raise ModelError("duplicate 'vars' line", lineno)
            names = rest.split()
            if not names:
                raise ModelError("'vars' needs at least one name", lineno)
            for nm in names:
                if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", nm):
                    raise ModelError(f"bad variable name {nm!r}", lineno)
            if len(set(names)) != len(names):
                raise ModelError("duplicate variable name", lineno)
            variables = tuple(names)
            continue
        if variables is None:
            raise ModelError("'vars' must come first", lineno, 1)

        if keyword == "location":
            if not rest or " " in rest:
                raise ModelError("location needs a single name", lineno)
            if rest in locations:
                raise ModelError(f"duplicate location {rest!r}", lineno)
            locations[rest] = {"field": None, "invariant": [], "unsafe": None, "line": lineno}
            order.append(rest)
            current = ("location", rest)
        elif keyword == "transition":
            m = re.fullmatch(r"(\S+)\s*->\s*(\S+)", rest)
            if not m:
                raise ModelError("expected 'transition SRC -> DST'", lineno)
            transitions.append({"src": m.group(1), "dst": m.group(2), "guard": [], "reset": [], "line": lineno})
            current = ("transition", len(transitions) - 1)
        elif keyword == "init":
            if init_loc is not None:
                raise ModelError("duplicate 'init' section", lineno)
            if not rest:
                raise ModelError("init needs a location name", lineno)
            init_loc = rest
            current = ("init",)
        elif keyword in ("field", "invariant", "unsafe") and current and current[0] == "location":
            loc = locations[current[1]]
            if keyword == "field":
                if loc["field"] is not None:
                    raise ModelError("duplicate field", lineno)
                exprs = rest.split(";")
                if len(exprs) != len(variables):
                    raise ModelError(
                        f"field has {len(exprs)} components but there are {len(variables)} variables", lineno
                    )
                comps, pos = [], 0
                for e in exprs:
                    comps.append(_parse_expr(e, variables, lineno, rest_offset + pos))
                    pos += len(e) + 1
                loc["field"] = tuple(comps)
            elif keyword == "invariant":
                loc["invariant"].extend(_parse_constraints(rest, variables, lineno, rest_offset))
            else:
                cons = _parse_constraints(rest, variables, lineno, rest_offset)
                loc["unsafe"] = (loc["unsafe"] or []) + cons
        elif keyword in ("guard", "reset") and current and current[0] == "transition":
            tr = transitions[current[1]]
            if keyword == "guard":
                tr["guard"].extend(_parse_constraints(rest, variables, lineno, rest_offset))
            else:
                joint = variables + tuple(v + "'" for v in variables)
                tr["reset"].extend(_parse_constraints(rest, joint, lineno, rest_offset))
        elif keyword == "set" and current == ("init",):
            init_set.extend(_parse_constraints(rest, variables, lineno, rest_offset))
        else:
            raise ModelError(f"unexpected {keyword!r} here", lineno, indent + 1)

    if variables is None:
        raise ModelError("missing 'vars' line")
    if not order:
        raise ModelError("no locations declared")
    if init_loc is None:
        raise ModelError("missing 'init' section (initial location)")
    if init_loc not in locations:
        raise ModelError(f"initial location {init_loc!r} is not declared")
    for name in order:
        if locations[name]["field"] is None:
            raise ModelError(f"location {name!r} has no field", locations[name]["line"])
    for tr in transitions:
        for end in (tr["src"], tr["dst"]):
            if end not in locations:
                raise ModelError(f"transition endpoint {end!r} is not a declared location", tr["line"])

    locs = tuple(
        Location(
            id=name,
            field=locations[name]["field"],
            invariant_set=SemialgebraicSet(tuple(locations[name]["invariant"])),
            unsafe_set=None if locations[name]["unsafe"] is None else SemialgebraicSet(tuple(locations[name]["unsafe"])),
        )
        for name in order
    )
    trs = tuple(
        Transition(tr["src"], tr["dst"], SemialgebraicSet(tuple(tr["guard"])), ResetRelation(tuple(tr["reset"])))
        for tr in transitions
    )
    system = HybridSystem(variables, locs, trs, init_loc, SemialgebraicSet(tuple(init_set)))
    check_structure(system)
    return system


def check_structure(system: HybridSystem) -> None:
    """Raise :class:`ModelError` on any structural violation."""
    V = system.variables
    joint = system.joint_variables
    ids = system.location_ids()
    if len(set(ids)) != len(ids):
        raise ModelError("duplicate location ids")
    if system.initial_location not in ids:
        raise ModelError(f"initial location {system.initial_location!r} is not declared")
    for p in system.initial_set:
        if p.variables != V:
            raise ModelError("initial set polynomial over wrong variables")
    for loc in system.locations:
        if len(loc.field) != len(V):
            raise ModelError(f"field of {loc.id!r} has {len(loc.field)} components, expected {len(V)}")
        sets = list(loc.field) + list(loc.invariant_set) + list(loc.unsafe_set or ())
        if any(p.variables != V for p in sets):
            raise ModelError(f"polynomial at location {loc.id!r} is over the wrong variables")
    for tr in system.transitions:
        if tr.source not in ids or tr.target not in ids:
            raise ModelError(f"transition {tr.source}->{tr.target} names an undeclared location")
        if any(p.variables != V for p in tr.guard):
            raise ModelError("guard polynomial over wrong variables")
        if any(p.variables != joint for p in tr.reset):
            raise ModelError("reset polynomial must be over current and primed variables")


# -- serialization -----------------------------------------------------------

def _constraints_text(polys) -> str:
    return " ; ".join(f"{format_poly(p)} >= 0" for p in polys)


def serialize_system(system: HybridSystem) -> str:
    lines = ["vars " + " ".join(system.variables)]
    for loc in system.locations:
        lines.append(f"location {loc.id}")
        lines.append("  field " + " ; ".join(format_poly(p) for p in loc.field))
        if len(loc.invariant_set):
            lines.append("  invariant " + _constraints_text(loc.invariant_set))
        if loc.unsafe_set is not None:
            lines.append("  unsafe " + _constraints_text(loc.unsafe_set))
    for tr in system.transitions:
        lines.append(f"transition {tr.source} -> {tr.target}")
        if len(tr.guard):
            lines.append("  guard " + _constraints_text(tr.guard))
        if len(tr.reset):
            lines.append("  reset " + _constraints_text(tr.reset))
    lines.append(f"init {system.initial_location}")
    if len(system.initial_set):
        lines.append("  set " + _constraints_text(system.initial_set))
    return "\n".join(lines) + "\n"


# -- sampling helpers --------------------------------------------------------

def _interval_from(p: Polynomial):
    """Per-variable bounds implied by one constraint p >= 0, when easy to read.

    Handles univariate linear/concave-quadratic constraints and separable
    concave quadratics (disks and ellipses).  Returns {var_index: (lo, hi)}
    with ``None`` for an open side.
    """
    if p.degree() > 2:
        return {}
    n = p.nvars
    used = [i for i in range(n) if p.degree_in(i) > 0]
    if not used:
        return {}
    quad = {}
    lin = {}
    const = Fraction(0)
    for m, c in p.terms.items():
        deg = sum(m)
        if deg == 0:
            const = c
        elif deg == 1:
            lin[m.index(1)] = c
        elif max(m) == 2:
            quad[m.index(2)] = c
        else:
            return {}  # cross term
    if len(used) == 1 and not quad:
        i = used[0]
        a = lin[i]
        root = -const / a
        return {i: (root, None) if a > 0 else (None, root)}
    if any(quad.get(i, 0) >= 0 for i in used):
        return {}
    # complete squares: p = K - sum |a_i| (x_i - h_i)^2
    K = const
    centers = {}
    for i in used:
        a = quad[i]
        b = lin.get(i, Fraction(0))
        h = -b / (2 * a)
        centers[i] = h
        K -= a * h * h
    if K < 0:
        return {i: (centers[i], centers[i]) for i in used}  # empty; degenerate box
    out = {}
    for i in used:
        r = math.sqrt(float(K / -quad[i]))
        out[i] = (float(centers[i]) - r, float(centers[i]) + r)
    return out


def bounding_box(polys: Sequence[Polynomial], nvars: int):
    """Box enclosing {p >= 0 for all p}, or None when some side is unbounded."""
    lo = [None] * nvars
    hi = [None] * nvars
    for p in polys:
        for i, (a, b) in _interval_from(p).items():
            if a is not None:
                lo[i] = float(a) if lo[i] is None else max(lo[i], float(a))
            if b is not None:
                hi[i] = float(b) if hi[i] is None else min(hi[i], float(b))
    if any(v is None for v in lo + hi):
        return None
    return list(zip(lo, hi))


def grid_points(box, step: float = 0.05):
    """Grid over ``box`` with spacing ``step``; endpoints included."""
    step = Fraction(step).limit_denominator(10**6)
    axes = []
    for lo, hi in box:
        start = Fraction(lo).limit_denominator(10**9)
        k0 = math.ceil(start / step)
        k1 = math.floor(Fraction(hi).limit_denominator(10**9) / step)
        ticks = [float(k * step) for k in range(k0, k1 + 1)]
        if not ticks:
            ticks = [float((Fraction(lo) + Fraction(hi)) / 2)]
        axes.append(ticks)
    return itertools.product(*axes)


def validate(system: HybridSystem, step: float = 0.05) -> list:
    """Structural check plus a sampled test that the initial set lies in Psi(l0).

    Structural problems raise :class:`ModelError`; the sampling test only
    produces warning strings.
    """
    check_structure(system)
    warnings = []
    n = len(system.variables)
    box = bounding_box(system.initial_set.constraints, n)
    if box is None:
        warnings.append("could not read a bounding box for the initial set; containment in Psi(l0) not sampled")
        return warnings
    theta = [p.to_float() for p in system.initial_set]
    psi = [p.to_float() for p in system.location(system.initial_location).invariant_set]
    for pt in grid_points(box, step):
        if all(t.evaluate(pt) >= -1e-12 for t in theta):
            bad = [q for q in psi if q.evaluate(pt) < -1e-12]
            if bad:
                coords = ", ".join(f"{v}={x:g}" for v, x in zip(system.variables, pt))
                warnings.append(f"initial point ({coords}) violates the invariant of {system.initial_location}")
                break
    return warnings
