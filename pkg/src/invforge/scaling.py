"""Exact affine change of variables x = c + s*u applied to a whole system.

Monomial bases over boxes far from the origin (say [1, 5]^2 with degree-10
multipliers) are badly conditioned, and the interior-point solver then
reports feasibility it cannot back up.  Working in u, where every set sits
roughly inside [-1, 1]^n, avoids that.  All maps are exact over the
rationals, so a certificate found in u can be pulled back to x verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .model import HybridSystem, Location, ResetRelation, SemialgebraicSet, Transition, bounding_box
from .poly import Polynomial


@dataclass(frozen=True)
class AffineScaling:
    centers: tuple  # Fractions
    scales: tuple  # positive Fractions

    @property
    def is_identity(self) -> bool:
        return all(c == 0 for c in self.centers) and all(s == 1 for s in self.scales)

    def inverse(self) -> "AffineScaling":
        # u = (x - c)/s  =  (-c/s) + (1/s) x
        return AffineScaling(
            tuple(-c / s for c, s in zip(self.centers, self.scales)),
            tuple(1 / s for s in self.scales),
        )

    def doubled(self) -> "AffineScaling":
        """Same map applied to (x, x') jointly."""
        return AffineScaling(self.centers * 2, self.scales * 2)


def substitute(p: Polynomial, t: AffineScaling) -> Polynomial:
    """p(c + s*u), written over the same variable names."""
    V = p.variables
    n = len(V)
    if len(t.centers) != n:
        raise ValueError("scaling dimension does not match the polynomial")
    lin = []
    for i in range(n):
        e = tuple(1 if k == i else 0 for k in range(n))
        lin.append(Polynomial(V, {e: t.scales[i], (0,) * n: t.centers[i]}, p.kind))
    out = Polynomial.zero(V, p.kind)
    cache: dict = {}
    for m, c in p.terms.items():
        term = Polynomial.constant(V, c, p.kind)
        for i, a in enumerate(m):
            if a:
                key = (i, a)
                if key not in cache:
                    cache[key] = lin[i] ** a
                term = term * cache[key]
        out = out + term
    return out


def rescale_system(system: HybridSystem, t: AffineScaling) -> HybridSystem:
    """The same hybrid system written in the coordinates u with x = c + s*u."""
    sub = lambda p: substitute(p, t)  # noqa: E731
    joint = t.doubled()
    locs = []
    for loc in system.locations:
        field = tuple(sub(f) * (Fraction(1) / s) for f, s in zip(loc.field, t.scales))
        inv = SemialgebraicSet(tuple(sub(p) for p in loc.invariant_set))
        uns = None if loc.unsafe_set is None else SemialgebraicSet(tuple(sub(p) for p in loc.unsafe_set))
        locs.append(Location(loc.id, field, inv, uns))
    trs = [
        Transition(
            tr.source,
            tr.target,
            SemialgebraicSet(tuple(sub(p) for p in tr.guard)),
            ResetRelation(tuple(substitute(p, joint) for p in tr.reset)),
        )
        for tr in system.transitions
    ]
    init = SemialgebraicSet(tuple(sub(p) for p in system.initial_set))
    return HybridSystem(system.variables, tuple(locs), tuple(trs), system.initial_location, init)


def _quarter_floor(x: float) -> Fraction:
    return Fraction(math.floor(x * 4), 4)


def _quarter_ceil(x: float) -> Fraction:
    return Fraction(math.ceil(x * 4), 4)


def choose_scaling(system: HybridSystem) -> AffineScaling:
    """Center and half-width (multiples of 1/4) of the box around all location domains.

    Falls back to the identity on any axis that is not bounded by the
    readable constraints.
    """
    n = len(system.variables)
    lo = [math.inf] * n
    hi = [-math.inf] * n
    boxes = [bounding_box(list(loc.invariant_set), n) for loc in system.locations]
    boxes.append(bounding_box(list(system.initial_set), n))
    for box in boxes:
        for i in range(n):
            if box is None:
                lo[i], hi[i] = -math.inf, math.inf
            else:
                lo[i] = min(lo[i], box[i][0])
                hi[i] = max(hi[i], box[i][1])
    centers, scales = [], []
    for a, b in zip(lo, hi):
        if not (math.isfinite(a) and math.isfinite(b)):
            centers.append(Fraction(0))
            scales.append(Fraction(1))
            continue
        c = _quarter_floor((a + b) / 2 + 0.125)
        s = max(_quarter_ceil(max(b - float(c), float(c) - a)), Fraction(1, 4))
        centers.append(c)
        scales.append(s)
    return AffineScaling(tuple(centers), tuple(scales))
