"""Sparse multivariate polynomials with exact (Fraction) or float coefficients.

Monomials are exponent tuples, one entry per variable.  The canonical monomial
order is graded lexicographic: total degree first, then the exponent tuple
compared lexicographically.  For two variables of degree one that gives
``[1, x2, x1]`` because ``(0, 1) < (1, 0)``.

Polynomials are immutable values.  Every polynomial carries its ordered list
of variable names, and binary operations require the two operands to agree on
it (use :meth:`Polynomial.embed` to move a polynomial into a larger space).
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from itertools import combinations_with_replacement
from numbers import Rational as _RationalABC
from typing import Iterable, Mapping, Sequence, Union

Monomial = tuple
Number = Union[int, Fraction, float]

RATIONAL = "rational"
FLOAT = "float"

# float kind: coefficients below this fraction of the largest one are dropped
FLOAT_DEAD_ZONE = 1e-12


class PolynomialError(ValueError):
    """Raised on variable-list, kind or dimension mismatches."""


class PolySyntaxError(ValueError):
    """Raised by :func:`parse_poly` on malformed input."""

    def __init__(self, message: str, column: int):
        super().__init__(f"{message} (column {column})")
        self.message = message
        self.column = column


def grlex_key(m: Monomial):
    return (sum(m), m)


def enumerate_monomials(n: int, d: int) -> list:
    """All monomials in ``n`` variables of total degree <= ``d``, graded-lex sorted."""
    if n < 1 or d < 0:
        raise ValueError("need n >= 1 and d >= 0")
    out = []
    for deg in range(d + 1):
        for combo in combinations_with_replacement(range(n), deg):
            exps = [0] * n
            for i in combo:
                exps[i] += 1
            out.append(tuple(exps))
    out.sort(key=grlex_key)
    return out


def monomial_count(n: int, d: int) -> int:
    return math.comb(n + d, d)


def _as_coeff(value, kind: str):
    if kind == RATIONAL:
        if isinstance(value, float):
            # decimal literal semantics: repr is the shortest exact decimal
            return Fraction(repr(float(value)))
        if isinstance(value, _RationalABC):
            return Fraction(int(value.numerator), int(value.denominator))
        raise PolynomialError(f"cannot use {value!r} as a rational coefficient")
    return float(value)


class Polynomial:
    """Immutable sparse polynomial over an ordered list of variables."""

    __slots__ = ("_vars", "_terms", "_kind")

    def __init__(
        self,
        variables: Sequence[str],
        terms: Mapping[Monomial, Number] | None = None,
        kind: str = RATIONAL,
    ):
        if kind not in (RATIONAL, FLOAT):
            raise PolynomialError(f"unknown coefficient kind {kind!r}")
        self._vars = tuple(variables)
        self._kind = kind
        n = len(self._vars)
        clean = {}
        for mono, c in (terms or {}).items():
            mono = tuple(int(a) for a in mono)
            if len(mono) != n or any(a < 0 for a in mono):
                raise PolynomialError(f"bad monomial {mono} for {n} variables")
            c = _as_coeff(c, kind)
            if c != 0:
                clean[mono] = clean.get(mono, 0) + c
        if kind == FLOAT and clean:
            cutoff = FLOAT_DEAD_ZONE * max(abs(c) for c in clean.values())
            clean = {m: c for m, c in clean.items() if abs(c) > cutoff}
        else:
            clean = {m: c for m, c in clean.items() if c != 0}
        self._terms = clean

    # -- constructors ---------------------------------------------------
    @classmethod
    def constant(cls, variables: Sequence[str], value: Number, kind: str = RATIONAL):
        return cls(variables, {(0,) * len(variables): value}, kind)

    @classmethod
    def variable(cls, variables: Sequence[str], name: str, kind: str = RATIONAL):
        variables = tuple(variables)
        if name not in variables:
            raise PolynomialError(f"unknown variable {name!r}")
        mono = tuple(1 if v == name else 0 for v in variables)
        return cls(variables, {mono: 1}, kind)

    @classmethod
    def zero(cls, variables: Sequence[str], kind: str = RATIONAL):
        return cls(variables, {}, kind)

    @classmethod
    def from_coefficients(
        cls, variables: Sequence[str], monomials: Sequence[Monomial], coeffs: Iterable[Number], kind: str = RATIONAL
    ):
        return cls(variables, dict(zip(monomials, coeffs)), kind)

    # -- accessors --------------------------------------------------------
    @property
    def variables(self) -> tuple:
        return self._vars

    @property
    def kind(self) -> str:
        return self._kind

    @property
    def terms(self) -> dict:
        return dict(self._terms)

    @property
    def nvars(self) -> int:
        return len(self._vars)

    @property
    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        return max((sum(m) for m in self._terms), default=0)

    def degree_in(self, var: int) -> int:
        return max((m[var] for m in self._terms), default=0)

    def coefficient(self, mono: Monomial):
        return self._terms.get(tuple(mono), Fraction(0) if self._kind == RATIONAL else 0.0)

    def monomials(self) -> list:
        return sorted(self._terms, key=grlex_key)

    def items(self):
        """(monomial, coefficient) pairs in graded-lex order."""
        return [(m, self._terms[m]) for m in self.monomials()]

    def used_variables(self) -> set:
        return {self._vars[i] for m in self._terms for i, a in enumerate(m) if a}

    # -- arithmetic -------------------------------------------------------
    def _check(self, other: "Polynomial"):
        if self._vars != other._vars:
            raise PolynomialError(f"variable lists differ: {self._vars} vs {other._vars}")
        if self._kind != other._kind:
            raise PolynomialError(f"coefficient kinds differ: {self._kind} vs {other._kind}")

    def _coerce(self, other):
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, Fraction)):
            return Polynomial.constant(self._vars, other, self._kind)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self._terms)
        for m, c in other._terms.items():
            terms[m] = terms.get(m, 0) + c
        return Polynomial(self._vars, terms, self._kind)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self._vars, {m: -c for m, c in self._terms.items()}, self._kind)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, Fraction)):
            c = _as_coeff(other, self._kind)
            return Polynomial(self._vars, {m: a * c for m, a in self._terms.items()}, self._kind)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms: dict = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                terms[m] = terms.get(m, 0) + c1 * c2
        return Polynomial(self._vars, terms, self._kind)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, Fraction)):
            if other == 0:
                raise ZeroDivisionError("polynomial division by zero")
            inv = Fraction(1) / Fraction(other) if self._kind == RATIONAL else 1.0 / other
            return self * inv
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise PolynomialError("exponent must be a nonnegative integer")
        result = Polynomial.constant(self._vars, 1, self._kind)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        if isinstance(other, Polynomial):
            return self._vars == other._vars and self._kind == other._kind and self._terms == other._terms
        if isinstance(other, (int, float, Fraction)):
            return self == Polynomial.constant(self._vars, other, self._kind)
        return NotImplemented

    def __hash__(self):
        return hash((self._vars, self._kind, frozenset(self._terms.items())))

    # -- calculus and evaluation -----------------------------------------
    def diff(self, var: int | str) -> "Polynomial":
        i = self._vars.index(var) if isinstance(var, str) else var
        terms = {}
        for m, c in self._terms.items():
            if m[i]:
                dm = m[:i] + (m[i] - 1,) + m[i + 1 :]
                terms[dm] = c * m[i]
        return Polynomial(self._vars, terms, self._kind)

    def evaluate(self, point: Sequence[Number]):
        if len(point) != self.nvars:
            raise PolynomialError(f"point has {len(point)} entries, expected {self.nvars}")
        if self._kind == RATIONAL:
            point = [_as_coeff(p, RATIONAL) for p in point]
            total = Fraction(0)
        else:
            point = [float(p) for p in point]
            total = 0.0
        for m, c in self._terms.items():
            term = c
            for x, a in zip(point, m):
                if a:
                    term *= x**a
            total += term
        return total

    def __call__(self, *point):
        return self.evaluate(point)

    # -- conversions ------------------------------------------------------
    def to_float(self) -> "Polynomial":
        return Polynomial(self._vars, {m: float(c) for m, c in self._terms.items()}, FLOAT)

    def embed(self, variables: Sequence[str]) -> "Polynomial":
        """Re-express over a variable list that contains all used variables."""
        variables = tuple(variables)
        pos = {v: i for i, v in enumerate(variables)}
        terms = {}
        for m, c in self._terms.items():
            new = [0] * len(variables)
            for v, a in zip(self._vars, m):
                if a:
                    if v not in pos:
                        raise PolynomialError(f"variable {v!r} missing from target list")
                    new[pos[v]] = a
            terms[tuple(new)] = c
        return Polynomial(variables, terms, self._kind)

    def rename(self, mapping: Mapping[str, str]) -> "Polynomial":
        """Rename variables; the result lives over the renamed variable list."""
        return Polynomial(tuple(mapping.get(v, v) for v in self._vars), self._terms, self._kind)

    def __repr__(self):
        return f"Polynomial({format_poly(self)!r}, vars={self._vars})"

    def __str__(self):
        return format_poly(self)


def lie_derivative(phi: Polynomial, field: Sequence[Polynomial]) -> Polynomial:
    """Sum over i of d(phi)/dx_i * field_i."""
    if len(field) != phi.nvars:
        raise PolynomialError(f"field has {len(field)} components, expected {phi.nvars}")
    out = Polynomial.zero(phi.variables, phi.kind)
    for i, fi in enumerate(field):
        out = out + phi.diff(i) * fi
    return out


# -- text form ---------------------------------------------------------------

def _display_key(m: Monomial):
    return (sum(m), tuple(-a for a in m))


def _format_coeff(c) -> str:
    if isinstance(c, Fraction):
        return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"
    return repr(float(c))


def format_poly(p: Polynomial) -> str:
    """Render as e.g. ``-22/49 + 319/931*x1 - 251/931*x2 + 239/931*x1^2``."""
    if p.is_zero:
        return "0"
    parts = []
    for m in sorted(p._terms, key=_display_key):
        c = p._terms[m]
        neg = c < 0
        mag = -c if neg else c
        factors = []
        for v, a in zip(p.variables, m):
            if a == 1:
                factors.append(v)
            elif a > 1:
                factors.append(f"{v}^{a}")
        if not factors:
            body = _format_coeff(mag)
        elif mag == 1:
            body = "*".join(factors)
        else:
            body = _format_coeff(mag) + "*" + "*".join(factors)
        if not parts:
            parts.append(("-" if neg else "") + body)
        else:
            parts.append(("- " if neg else "+ ") + body)
    return " ".join(parts)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*'?)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            col = pos + (len(text[pos:]) - len(text[pos:].lstrip())) + 1
            raise PolySyntaxError(f"unexpected character {text[col - 1]!r}", col)
        kind = m.lastgroup
        value = m.group(kind)
        start = m.start(kind) + 1
        tokens.append((kind, "^" if value == "**" else value, start))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.vars = tuple(variables)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self) -> Polynomial:
        p = self.expr()
        kind, value, col = self.peek()
        if kind != "end":
            raise PolySyntaxError(f"unexpected {value!r}", col)
        return p

    def expr(self):
        p = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            q = self.term()
            p = p + q if op == "+" else p - q
        return p

    def term(self):
        p = self.unary()
        while True:
            kind, value, col = self.peek()
            if kind == "op" and value in ("*", "/"):
                self.take()
                q = self.unary()
                if value == "*":
                    p = p * q
                else:
                    if q.degree() > 0 or q.is_zero:
                        raise PolySyntaxError("division only by a nonzero constant", col)
                    p = p / q.coefficient((0,) * len(self.vars))
            elif kind in ("num", "name") or (kind == "op" and value == "("):
                p = p * self.power()
            else:
                return p

    def unary(self):
        kind, value, col = self.peek()
        if kind == "op" and value in ("+", "-"):
            self.take()
            p = self.unary()
            return -p if value == "-" else p
        return self.power()

    def power(self):
        base = self.atom()
        kind, value, col = self.peek()
        if kind == "op" and value == "^":
            self.take()
            kind, value, col = self.take()
            if kind != "num" or not value.isdigit():
                raise PolySyntaxError("exponent must be a nonnegative integer literal", col)
            return base ** int(value)
        return base

    def atom(self):
        kind, value, col = self.take()
        if kind == "num":
            return Polynomial.constant(self.vars, Fraction(value))
        if kind == "name":
            if value not in self.vars:
                raise PolySyntaxError(f"undeclared variable {value!r}", col)
            return Polynomial.variable(self.vars, value)
        if kind == "op" and value == "(":
            p = self.expr()
            kind, value, col = self.take()
            if value != ")":
                raise PolySyntaxError("expected ')'", col)
            return p
        raise PolySyntaxError(f"unexpected {value or 'end of input'!r}", col)


def parse_poly(text: str, variables: Sequence[str]) -> Polynomial:
    """Parse polynomial text over ``variables``; decimals are read exactly."""
    return _Parser(text, variables).parse()
