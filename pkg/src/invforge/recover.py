"""Turning floating-point SDP output into exact rational data.

The pieces here are independent of the hybrid-system model: simultaneous
rational approximation with a bounded common denominator, rounding of
(near-)diagonal Gram blocks, Gauss-Newton refinement of a factor ``X = L L^T``
against linear constraints, exact orthogonal projection onto an affine space
of symmetric matrices, and an exact PSD test with a witness vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np


class RecoveryError(Exception):
    pass


class NoRationalWithinTolerance(RecoveryError):
    pass


class NotDiagonallyDominant(RecoveryError):
    pass


class StalledRefinement(RecoveryError):
    pass


class ProjectionLeavesCone(RecoveryError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


@dataclass
class RecoverySettings:
    denominator_bound: int = 1000
    tolerance: float = 1e-2
    offdiag_tol: float = 1e-6
    gn_max_iters: int = 50
    gn_target: float = 1e-12
    rank_tol: float = 1e-9

    def __post_init__(self):
        if self.denominator_bound < 1:
            raise ValueError("denominator bound must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class RationalMatrix:
    rows: tuple  # tuple of tuples of Fraction

    @classmethod
    def from_rows(cls, rows) -> "RationalMatrix":
        return cls(tuple(tuple(Fraction(v) for v in r) for r in rows))

    @classmethod
    def zeros(cls, n: int) -> "RationalMatrix":
        return cls(tuple(tuple(Fraction(0) for _ in range(n)) for _ in range(n)))

    @classmethod
    def diagonal(cls, diag) -> "RationalMatrix":
        n = len(diag)
        return cls(tuple(tuple(Fraction(diag[i]) if i == j else Fraction(0) for j in range(n)) for i in range(n)))

    @property
    def size(self) -> int:
        return len(self.rows)

    def __getitem__(self, ij):
        i, j = ij
        return self.rows[i][j]

    def is_symmetric(self) -> bool:
        n = self.size
        return all(self.rows[i][j] == self.rows[j][i] for i in range(n) for j in range(i + 1, n))

    def is_diagonal(self) -> bool:
        n = self.size
        return all(self.rows[i][j] == 0 for i in range(n) for j in range(n) if i != j)

    def to_float(self) -> np.ndarray:
        return np.array([[float(v) for v in r] for r in self.rows], dtype=float).reshape(self.size, self.size)

    def quadratic_form(self, v) -> Fraction:
        n = self.size
        return sum((v[i] * self.rows[i][j] * v[j] for i in range(n) for j in range(n)), Fraction(0))

    def scaled(self, c) -> "RationalMatrix":
        c = Fraction(c)
        return RationalMatrix(tuple(tuple(c * v for v in r) for r in self.rows))

    def congruence(self, T) -> "RationalMatrix":
        """T^T M T for a rational matrix T given as rows."""
        n, k = len(T), len(T[0]) if T else 0
        MT = [[sum((self.rows[i][a] * T[a][j] for a in range(n) if T[a][j]), Fraction(0)) for j in range(k)] for i in range(n)]
        out = [[sum((T[a][i] * MT[a][j] for a in range(n) if T[a][i]), Fraction(0)) for j in range(k)] for i in range(k)]
        return RationalMatrix.from_rows(out)


# -- simultaneous Diophantine approximation ---------------------------------

def _convergent_denominators(x: float, bound: int) -> list:
    out = []
    h0, h1, k0, k1 = 0, 1, 1, 0
    a = x
    for _ in range(64):
        ai = math.floor(a)
        h0, h1 = h1, ai * h1 + h0
        k0, k1 = k1, ai * k1 + k0
        if k1 > bound:
            break
        out.append(k1)
        frac = a - ai
        if frac < 1e-15:
            break
        a = 1.0 / frac
    return out


def _max_error(values: np.ndarray, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    scaled = np.multiply.outer(q, values)
    return np.max(np.abs(np.round(scaled) - scaled), axis=-1) / q


_SCAN_LIMIT = 2_000_000


def _exact_within(v, q: int, tol: Fraction) -> bool:
    for x in v:
        fx = Fraction(float(x))
        if abs(fx - Fraction(int(round(x * q)), q)) > tol:
            return False
    return True


def diophantine_recover(values: Sequence[float], denominator_bound: int, tolerance: float):
    """Rationals ``p_i/q`` with one common ``q <= denominator_bound``.

    Returns ``(fractions, q)`` where ``q`` is the smallest common denominator
    achieving ``max_i |v_i - p_i/q| <= tolerance``.  Bounds up to two million
    are scanned exhaustively, which makes "smallest" exact; larger bounds fall
    back to merging continued-fraction denominators by least common multiple.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return [], 1
    if not np.all(np.isfinite(v)):
        raise NoRationalWithinTolerance("non-finite input")
    D = int(denominator_bound)
    # float screening with a little slack, then an exact decision
    loose = tolerance * (1 + 1e-9)
    tol = Fraction(tolerance)
    q = None
    if D <= _SCAN_LIMIT:
        chunk = max(1, min(D, 4_000_000 // max(v.size, 1)))
        for lo in range(1, D + 1, chunk):
            qs = np.arange(lo, min(D, lo + chunk - 1) + 1)
            ok = np.nonzero(_max_error(v, qs) <= loose)[0]
            q = next((int(qs[k]) for k in ok if _exact_within(v, int(qs[k]), tol)), None)
            if q is not None:
                break
    else:
        cands = {1}
        for x in v:
            merged = set()
            for qd in _convergent_denominators(float(x - math.floor(x)), D):
                for c in cands:
                    lcm = c * qd // math.gcd(c, qd)
                    if lcm <= D:
                        merged.add(lcm)
            cands |= merged
        good = sorted(c for c in cands if _max_error(v, [c])[0] <= loose and _exact_within(v, c, tol))
        q = good[0] if good else None
    if q is None:
        raise NoRationalWithinTolerance(
            f"no common denominator <= {D} brings all {v.size} values within {tolerance:g}"
        )
    return [Fraction(int(round(x * q)), q) for x in v], q


# -- Gram blocks -------------------------------------------------------------

def round_diagonal_block(M, settings: Optional[RecoverySettings] = None) -> RationalMatrix:
    """Rational diagonal matrix near a nearly diagonal PSD matrix.

    Off-diagonal entries up to ``offdiag_tol`` times the largest diagonal
    entry are set to zero; the diagonal goes through diophantine_recover and
    is clamped at zero, so the result is PSD by construction.
    """
    settings = settings or RecoverySettings()
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 0:
        return RationalMatrix(())
    diag = np.diag(M)
    ref = max(float(np.max(np.abs(diag))), 1e-300)
    off = float(np.max(np.abs(M - np.diag(diag))))
    if off > settings.offdiag_tol * ref:
        raise NotDiagonallyDominant(f"off-diagonal entry {off:.3e} against diagonal scale {ref:.3e}")
    if diag.min() < -settings.offdiag_tol * ref:
        raise NotDiagonallyDominant(f"negative diagonal entry {diag.min():.3e}")
    fr, _ = diophantine_recover(np.clip(diag, 0.0, None), settings.denominator_bound, settings.tolerance)
    return RationalMatrix.diagonal([max(f, Fraction(0)) for f in fr])


def round_block(M, denominator: int) -> RationalMatrix:
    """Entrywise rounding of a symmetric matrix to multiples of 1/denominator."""
    M = np.asarray(M, dtype=float)
    M = (M + M.T) / 2
    q = int(denominator)
    return RationalMatrix.from_rows([[Fraction(int(round(x * q)), q) for x in r] for r in M])


# -- Gauss-Newton on the factor ---------------------------------------------

def _residual(Aop: np.ndarray, b: np.ndarray, L: np.ndarray) -> np.ndarray:
    X = L @ L.T
    return np.tensordot(Aop, X, axes=([1, 2], [0, 1])) - b


def refine_factor(Aop, b, L0, max_iters: int = 50, target: float = 1e-12):
    """Gauss-Newton on ``<A_k, L L^T> = b_k``; returns ``(L, residual_norm, iterations)``.

    ``Aop`` has shape (m, n, n) with symmetric slices.  Each step solves the
    linearized system in the least-squares sense and is accepted only after a
    halving line search lowers the residual, so the residual never grows.
    Raises StalledRefinement (carrying the best factor) when five iterations
    in a row fail to lower the residual by a relative 1e-14.
    """
    Aop = np.asarray(Aop, dtype=float)
    b = np.asarray(b, dtype=float)
    L = np.array(L0, dtype=float)
    m = Aop.shape[0]
    r = _residual(Aop, b, L)
    norm = float(np.linalg.norm(r))
    history = [norm]
    it = 0
    while norm > target and it < max_iters:
        it += 1
        J = 2.0 * np.einsum("kij,jr->kir", Aop, L).reshape(m, -1)
        step = np.linalg.lstsq(J, -r, rcond=None)[0].reshape(L.shape)
        t = 1.0
        while t > 1e-10:
            Ln = L + t * step
            rn = _residual(Aop, b, Ln)
            nn = float(np.linalg.norm(rn))
            if nn < norm:
                L, r, norm = Ln, rn, nn
                break
            t /= 2
        history.append(norm)
        if len(history) > 5 and norm > target:
            old = history[-6]
            if old - norm <= 1e-14 * old:
                err = StalledRefinement(f"residual stalled at {norm:.3e} after {it} iterations")
                err.factor, err.residual = L, norm
                raise err
    return L, norm, it


def factor_psd(X, rank_tol: float = 1e-9) -> np.ndarray:
    """Factor ``X ~ L L^T`` keeping eigenvalues above ``rank_tol * max(1, |X|)``."""
    X = np.asarray(X, dtype=float)
    X = (X + X.T) / 2
    w, Q = np.linalg.eigh(X)
    keep = w > rank_tol * max(1.0, float(np.max(np.abs(w), initial=0.0)))
    return Q[:, keep] * np.sqrt(w[keep])


def gauss_newton_refine(problem, blocks, settings: Optional[RecoverySettings] = None) -> list:
    """Refine every block of a stage-2 problem independently.

    ``blocks`` are float matrices aligned with ``problem.blocks``.  A block
    whose refinement stalls keeps its best iterate.
    """
    from .sosgen import block_equalities, block_operator

    settings = settings or RecoverySettings()
    out = []
    for bid, (blk, X) in enumerate(zip(problem.blocks, blocks)):
        rows, rhs = block_equalities(problem, bid)
        Aop = block_operator(rows, blk.size)
        b = np.array([float(v) for v in rhs])
        L = factor_psd(X, settings.rank_tol)
        try:
            L, _, _ = refine_factor(Aop, b, L, settings.gn_max_iters, settings.gn_target)
        except StalledRefinement as err:
            L = err.factor
        out.append(L @ L.T)
    return out


# -- exact linear algebra ------------------------------------------------------

def _independent_rows(rows: list, rhs: list) -> list:
    """Indices of a maximal independent subset of a consistent exact system."""
    ncols = len(rows[0]) if rows else 0
    basis = []  # (pivot column, normalized reduced row, reduced rhs)
    keep = []
    for idx, (row, c) in enumerate(zip(rows, rhs)):
        r = list(row)
        for col, br, bc in basis:
            f = r[col]
            if f:
                r = [a - f * b for a, b in zip(r, br)]
                c = c - f * bc
        piv = next((j for j in range(ncols) if r[j] != 0), None)
        if piv is None:
            if c != 0:
                raise RecoveryError("inconsistent exact constraints")
            continue
        p = r[piv]
        basis.append((piv, [a / p for a in r], c / p))
        keep.append(idx)
    return keep


def _solve_exact(M: list, rhs: list) -> list:
    """Solve the square nonsingular system M z = rhs over the rationals."""
    n = len(M)
    A = [list(r) + [c] for r, c in zip(M, rhs)]
    for k in range(n):
        piv = next(i for i in range(k, n) if A[i][k] != 0)
        A[k], A[piv] = A[piv], A[k]
        p = A[k][k]
        A[k] = [a / p for a in A[k]]
        for i in range(n):
            if i != k and A[i][k] != 0:
                f = A[i][k]
                A[i] = [a - f * b for a, b in zip(A[i], A[k])]
    return [A[i][n] for i in range(n)]


def affine_project(x_hat: list, rows: list, rhs: list, weights: list) -> list:
    """Exact minimizer of sum w_i (x_i - xhat_i)^2 subject to rows x = rhs."""
    keep = _independent_rows(rows, rhs)
    R = [rows[i] for i in keep]
    c = [rhs[i] for i in keep]
    inv_w = [Fraction(1) / w for w in weights]
    nz = [[j for j, a in enumerate(r) if a] for r in R]
    resid = [sum((r[j] * x_hat[j] for j in nzr), Fraction(0)) - ci for r, nzr, ci in zip(R, nz, c)]
    m = len(R)
    G = [[Fraction(0)] * m for _ in range(m)]
    for i in range(m):
        si = set(nz[i])
        for k in range(i, m):
            G[i][k] = G[k][i] = sum((R[i][j] * inv_w[j] * R[k][j] for j in si.intersection(nz[k])), Fraction(0))
    lam = _solve_exact(G, resid) if m else []
    x = list(x_hat)
    for i in range(m):
        if lam[i]:
            for j in nz[i]:
                x[j] -= inv_w[j] * R[i][j] * lam[i]
    return x


def exact_psd_check(M: RationalMatrix):
    """Exact LDL^T with symmetric (diagonal) pivoting.

    Returns ``(True, d)`` with the pivots d of the factorization when M is
    PSD, else ``(False, z)`` with a rational vector z such that z^T M z < 0.
    """
    n = M.size
    if not M.is_symmetric():
        raise ValueError("matrix is not symmetric")
    S = [list(r) for r in M.rows]
    # cheap witnesses first: a negative diagonal entry or a failing 2x2 test
    # (e_i -+ e_j)^T M (e_i -+ e_j) = M_ii + M_jj -+ 2 M_ij
    for i in range(n):
        if S[i][i] < 0:
            return False, [Fraction(int(k == i)) for k in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if S[i][i] + S[j][j] - 2 * abs(S[i][j]) < 0:
                sign = 1 if S[i][j] > 0 else -1
                return False, [Fraction(1 if k == i else (-sign if k == j else 0)) for k in range(n)]
    W = [[Fraction(int(i == j)) for i in range(n)] for j in range(n)]  # S[i][j] == W[i]^T M W[j]
    active = list(range(n))
    pivots = []
    while active:
        for j in active:
            if S[j][j] < 0:
                return False, W[j]
        p = max(active, key=lambda j: S[j][j])
        if S[p][p] == 0:
            # zero diagonal must come with a zero row
            for a_i, i in enumerate(active):
                for j in active[a_i + 1:]:
                    if S[i][j] != 0:
                        sign = 1 if S[i][j] > 0 else -1
                        return False, [a - sign * b for a, b in zip(W[i], W[j])]
            pivots.extend([Fraction(0)] * len(active))
            return True, pivots
        active.remove(p)
        piv = S[p][p]
        pivots.append(piv)
        for j in active:
            f = S[p][j] / piv
            if f:
                W[j] = [a - f * b for a, b in zip(W[j], W[p])]
        for i in active:
            fi = S[i][p]
            if fi:
                for j in active:
                    if S[p][j]:
                        S[i][j] -= fi * S[p][j] / piv
    return True, pivots


def rational_kernel(K: np.ndarray, denominator_bound: int = 1000, tolerance: float = 1e-6) -> list:
    """Rational basis of the span of the columns of K (reduced echelon form)."""
    B = np.array(K, dtype=float).T
    if B.size == 0:
        return []
    r = 0
    n = B.shape[1]
    for c in range(n):
        if r >= B.shape[0]:
            break
        p = r + int(np.argmax(np.abs(B[r:, c])))
        if abs(B[p, c]) < 1e-8:
            continue
        B[[r, p]] = B[[p, r]]
        B[r] /= B[r, c]
        for i in range(B.shape[0]):
            if i != r:
                B[i] -= B[i, c] * B[r]
        r += 1
    return [diophantine_recover(B[i], denominator_bound, tolerance)[0] for i in range(r)]


def project_to_rational_psd(
    M,
    rows: list,
    rhs: list,
    settings: Optional[RecoverySettings] = None,
    grid: int = 10**8,
) -> RationalMatrix:
    """Round M onto the grid 1/grid, project exactly onto the constraints, check PSD.

    ``rows[k]`` maps an upper-triangle pair ``(i, j)`` to the coefficient of
    ``Y[i, j]`` in constraint k, with ``rhs[k]`` the exact right side.  The
    projection is orthogonal in the Frobenius norm.  When M has eigenvalues
    below ``rank_tol``, a rational basis of that kernel is recovered and
    ``Y v = 0`` joins the constraints, so the result keeps the kernel and is
    PSD-checked on the complement.
    """
    settings = settings or RecoverySettings()
    M = np.asarray(M, dtype=float)
    M = (M + M.T) / 2
    n = M.shape[0]
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    col = {p: k for k, p in enumerate(pairs)}
    A, c = [], []
    for coeffs, bk in zip(rows, rhs):
        r = [Fraction(0)] * len(pairs)
        for (i, j), v in coeffs.items():
            r[col[(min(i, j), max(i, j))]] += Fraction(v)
        A.append(r)
        c.append(Fraction(bk))

    w, Q = np.linalg.eigh(M) if n else (np.zeros(0), np.zeros((0, 0)))
    scale = max(1.0, float(np.max(np.abs(w), initial=0.0)))
    ker = Q[:, w < settings.rank_tol * scale]
    if ker.shape[1]:
        try:
            basis = rational_kernel(ker, settings.denominator_bound)
        except NoRationalWithinTolerance as err:
            raise ProjectionLeavesCone(f"numerical kernel has no small rational basis: {err}")
        for v in basis:
            for i in range(n):
                r = [Fraction(0)] * len(pairs)
                for j in range(n):
                    if v[j]:
                        r[col[(min(i, j), max(i, j))]] += v[j]
                A.append(r)
                c.append(Fraction(0))

    x_hat = [Fraction(int(round(M[i, j] * grid)), grid) for i, j in pairs]
    weights = [Fraction(1) if i == j else Fraction(2) for i, j in pairs]
    try:
        x = affine_project(x_hat, A, c, weights)
    except RecoveryError as err:
        raise ProjectionLeavesCone(str(err))
    full = [[Fraction(0)] * n for _ in range(n)]
    for (i, j), v in zip(pairs, x):
        full[i][j] = full[j][i] = v
    Y = RationalMatrix.from_rows(full)
    ok, witness = exact_psd_check(Y)
    if not ok:
        raise ProjectionLeavesCone("projected matrix is not PSD", witness)
    return Y
