"""Dense primal-dual interior-point solver for the block SDPs built by sosgen.

Primal form::

    minimize    sum_j <C_j, X_j>
    subject to  sum_j <A_kj, X_j> + sum_l a_kl t_l + sum_f b_kf z_f = b_k
                X_j PSD,  t_l >= 0,  z_f free

Lower-bounded scalars ``s >= lo`` enter as ``t = s - lo``.  Free scalars are
eliminated up front by projecting the equalities onto the orthogonal
complement of their columns, then dependent rows are dropped with a pivoted
QR.  Iterations use Nesterov-Todd scaling with a Mehrotra predictor-corrector
step and a dense Schur complement factored by Cholesky.

Infeasibility is declared by a heuristic, not by a self-dual embedding: the
dual objective growing past 1e8 while the normalized dual ray ``(y, S)/b'y``
nearly satisfies ``A^T y + S = 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np
import scipy.linalg as sla

from .sosgen import SdpProblem, equality_matrix, tri_index, variable_layout

log = logging.getLogger(__name__)

FEASIBLE = "Feasible"
INFEASIBLE = "Infeasible"
MAX_ITERS = "MaxIters"
NUMERICAL_FAILURE = "NumericalFailure"

# the reduced system is solved a little tighter than asked so that mapping
# back to the original equalities keeps the residual below feas_tol
PRIMAL_MARGIN = 0.1


@dataclass
class SolverSettings:
    feas_tol: float = 1e-8
    duality_gap_tol: float = 1e-8
    max_iters: int = 200
    step_fraction: float = 0.98
    # Stop on the central path once the relative gap reaches this value
    # instead of driving it to zero; keeps every block strictly interior.
    center_gap: Optional[float] = None
    log_stream: Optional[TextIO] = None

    def __post_init__(self):
        if self.feas_tol <= 0 or self.duality_gap_tol <= 0 or self.max_iters <= 0:
            raise ValueError("solver tolerances and max_iters must be positive")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")


@dataclass
class SolverStatus:
    status: str
    iterations: int = 0
    primal_residual: float = float("inf")
    dual_residual: float = float("inf")
    gap: float = float("inf")
    primal_objective: float = float("nan")
    dual_objective: float = float("nan")
    message: str = ""
    gap_history: list = field(default_factory=list)


@dataclass
class RawSolution:
    status: str
    blocks: list  # dense symmetric matrices, one per SdpProblem block
    scalars: np.ndarray  # values for every SdpProblem scalar
    y: Optional[np.ndarray] = None  # multipliers of the reduced equality system
    duals: Optional[list] = None  # dual slack matrix per block
    bound_duals: Optional[np.ndarray] = None  # dual slacks of the bounded scalars


@dataclass
class StandardForm:
    """min <C,X> s.t. A(X) = b with X block-diagonal PSD (last block may be LP)."""

    sizes: list  # PSD block sizes
    A: list  # per PSD block: array (m, n, n), symmetric slices
    C: list  # per PSD block: (n, n)
    lp_A: np.ndarray  # (m, nl)
    lp_c: np.ndarray  # (nl,)
    b: np.ndarray

    @property
    def m(self) -> int:
        return self.b.shape[0]

    def apply(self, Xs, xl) -> np.ndarray:
        out = self.lp_A @ xl if xl.size else np.zeros(self.m)
        for Aj, Xj in zip(self.A, Xs):
            out = out + np.tensordot(Aj, Xj, axes=([1, 2], [0, 1]))
        return out

    def adjoint(self, y):
        return [np.tensordot(y, Aj, axes=(0, 0)) for Aj in self.A], self.lp_A.T @ y

    def objective(self, Xs, xl) -> float:
        return float(sum(np.sum(Cj * Xj) for Cj, Xj in zip(self.C, Xs)) + self.lp_c @ xl)


# -- problem reduction ------------------------------------------------------

@dataclass
class _Reduction:
    offsets: list
    sizes: list
    free_ids: list
    lp_ids: list
    lower: np.ndarray
    A_full: np.ndarray
    B_free: np.ndarray
    B_lp: np.ndarray
    b_full: np.ndarray


def _reduce(problem: SdpProblem) -> tuple:
    A, B, b = equality_matrix(problem)
    offsets, nx = variable_layout(problem)
    sizes = [blk.size for blk in problem.blocks]
    free_ids = [k for k, s in enumerate(problem.scalars) if s.lower is None]
    lp_ids = [k for k, s in enumerate(problem.scalars) if s.lower is not None]
    lower = np.array([float(problem.scalars[k].lower) for k in lp_ids])
    Bf = B[:, free_ids]
    Bl = B[:, lp_ids]
    rhs = b - (Bl @ lower if lp_ids else 0.0)
    G = np.hstack([A, Bl])  # columns: upper-triangle entries, then lp scalars

    if free_ids:
        Q, R, _ = sla.qr(Bf, pivoting=True)
        diag = np.abs(np.diag(R))
        tol = 1e-10 * (diag[0] if diag.size and diag[0] > 0 else 1.0)
        Q2 = Q[:, int(np.sum(diag > tol)):]
        G = Q2.T @ G
        rhs = Q2.T @ rhs

    # drop dependent rows with a pivoted QR of G^T
    if G.shape[0]:
        _, R, piv = sla.qr(G.T, pivoting=True, mode="economic")
        diag = np.abs(np.diag(R))
        tol = 1e-10 * (diag[0] if diag.size and diag[0] > 0 else 1.0)
        keep = np.sort(piv[: int(np.sum(diag > tol))])
        if G.shape[0] - keep.size:
            log.info("dropped %d linearly dependent equality rows", G.shape[0] - keep.size)
        G = G[keep]
        rhs = rhs[keep]

    m = G.shape[0]
    Ablocks, Cblocks = [], []
    for k, (off, n) in enumerate(zip(offsets, sizes)):
        Aj = np.zeros((m, n, n))
        iu, ju = np.triu_indices(n)
        cols = off + np.array([tri_index(i, j, n) for i, j in zip(iu, ju)], dtype=int)
        vals = G[:, cols] * np.where(iu == ju, 1.0, 0.5)
        Aj[:, iu, ju] = vals
        Aj[:, ju, iu] = vals
        Ablocks.append(Aj)
        w = problem.objective.get(k, 0.0)
        # a scalar is a trace weight; an n x n array is a full cost matrix
        Cblocks.append(_sym(np.asarray(w, dtype=float)) if np.ndim(w) == 2 else float(w) * np.eye(n))
    sf = StandardForm(sizes, Ablocks, Cblocks, G[:, nx:], np.zeros(len(lp_ids)), rhs)
    return sf, _Reduction(offsets, sizes, free_ids, lp_ids, lower, A, Bf, Bl, b)


def _flatten(offsets, sizes, nx, Xs) -> np.ndarray:
    x = np.zeros(nx)
    for off, n, Xj in zip(offsets, sizes, Xs):
        iu, ju = np.triu_indices(n)
        x[off + np.array([tri_index(i, j, n) for i, j in zip(iu, ju)], dtype=int)] = Xj[iu, ju]
    return x


def _recover_scalars(red: _Reduction, Xs, xl, nscal) -> np.ndarray:
    scal = np.zeros(nscal)
    lp_vals = xl + red.lower
    scal[red.lp_ids] = lp_vals
    if red.free_ids:
        x = _flatten(red.offsets, red.sizes, red.A_full.shape[1], Xs)
        target = red.b_full - red.A_full @ x - red.B_lp @ lp_vals
        scal[red.free_ids] = np.linalg.lstsq(red.B_free, target, rcond=None)[0]
    return scal


# -- linear algebra helpers -------------------------------------------------

def _sym(M):
    return (M + M.T) / 2


def _max_step(X, dX) -> float:
    """Largest alpha with X + alpha dX PSD (X positive definite)."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    Li = sla.solve_triangular(L, np.eye(X.shape[0]), lower=True)
    lam = np.linalg.eigvalsh(_sym(Li @ dX @ Li.T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _nt_scaling(X, S):
    """NT factor R with W = R R^T, R^-1 X R^-T = R^T S R = diag(v).

    R is not symmetric; working with it directly avoids the square root of
    W, whose small eigenvalues lose accuracy near the boundary of the cone.
    """
    Lx = np.linalg.cholesky(X)
    Ls = np.linalg.cholesky(S)
    _, sv, Vt = np.linalg.svd(Ls.T @ Lx)
    R = (Lx @ Vt.T) / np.sqrt(sv)
    Ri = (np.sqrt(sv)[:, None] * Vt) @ sla.solve_triangular(Lx, np.eye(X.shape[0]), lower=True)
    return R @ R.T, R, Ri, sv


def _lyap(v, rhs):
    """Solve (diag(v) Z + Z diag(v))/2 = rhs."""
    return rhs * (2.0 / (v[:, None] + v[None, :]))


class _Iterate:
    def __init__(self, Xs, xl, y, Ss, sl):
        self.Xs, self.xl, self.y, self.Ss, self.sl = Xs, xl, y, Ss, sl


def _solve_standard(sf: StandardForm, settings: SolverSettings, status: SolverStatus) -> Optional[_Iterate]:
    m = sf.m
    nl = sf.lp_A.shape[1]
    bnorm = np.max(np.abs(sf.b)) if m else 0.0
    x0 = 1.0 + bnorm
    Xs = [x0 * np.eye(n) for n in sf.sizes]
    Ss = [np.eye(n) for n in sf.sizes]
    xl = x0 * np.ones(nl)
    sl = np.ones(nl)
    y = np.zeros(m)
    ntot = sum(sf.sizes) + nl
    cnorm = max([np.linalg.norm(C) for C in sf.C] + [np.linalg.norm(sf.lp_c), 0.0])
    out = settings.log_stream
    prev_gap = np.inf

    for it in range(1, settings.max_iters + 1):
        ATy, ATy_l = sf.adjoint(y)
        Rp = sf.b - sf.apply(Xs, xl)
        Rd = [C - S - a for C, S, a in zip(sf.C, Ss, ATy)]
        Rd_l = sf.lp_c - sl - ATy_l
        gap = sum(np.sum(X * S) for X, S in zip(Xs, Ss)) + float(xl @ sl)
        mu = gap / ntot
        pobj = sf.objective(Xs, xl)
        dobj = float(sf.b @ y)
        pres = float(np.max(np.abs(Rp), initial=0.0))  # absolute, so Feasible bounds the true residual
        dres = np.sqrt(sum(np.sum(R * R) for R in Rd) + float(Rd_l @ Rd_l)) / (1.0 + cnorm)
        relgap = gap / (1.0 + abs(pobj) + abs(dobj))
        status.iterations, status.primal_residual, status.dual_residual = it, pres, dres
        status.gap, status.primal_objective, status.dual_objective = relgap, pobj, dobj
        status.gap_history.append(gap)
        if it == 1:
            mu0, pres0 = max(mu, 1e-300), max(pres, 1e-300)
        if out is not None:
            out.write(f"{it:4d} gap {gap:.3e} pres {pres:.3e} dres {dres:.3e} pobj {pobj:.6e} dobj {dobj:.6e}\n")
        if gap > prev_gap * (1 + 1e-9) and pres < settings.feas_tol:
            log.debug("duality gap increased at iteration %d (%.3e -> %.3e)", it, prev_gap, gap)
        prev_gap = gap

        if settings.center_gap is not None:
            target = settings.center_gap * max(abs(pobj), 1e-12)
            if pres <= PRIMAL_MARGIN * settings.feas_tol and dres <= settings.feas_tol and gap <= target * 1.05:
                status.status = FEASIBLE
                return _Iterate(Xs, xl, y, Ss, sl)
        elif pres <= PRIMAL_MARGIN * settings.feas_tol and dres <= settings.feas_tol and relgap <= settings.duality_gap_tol:
            status.status = FEASIBLE
            return _Iterate(Xs, xl, y, Ss, sl)

        # primal infeasibility ray: b'y large, A^T y + S small relative to it
        if dobj > 0:
            ray = np.sqrt(sum(np.sum((a + S) ** 2) for a, S in zip(ATy, Ss)) + float((ATy_l + sl) @ (ATy_l + sl)))
            if dobj > 1e8 or (ray / dobj < 1e-8 and dobj > 1e3 * max(1.0, abs(pobj))):
                status.status = INFEASIBLE
                status.message = f"dual ray: b'y={dobj:.3e}, |A'y+S|/b'y={ray / dobj:.2e}"
                return None

        # --- Schur complement with NT scaling ---
        try:
            scal = [_nt_scaling(X, S) for X, S in zip(Xs, Ss)]
        except np.linalg.LinAlgError:
            status.status = NUMERICAL_FAILURE
            status.message = "lost positive definiteness"
            return None
        # Schur complement A W A^T = K K^T with K the scaled constraints;
        # a QR of K^T avoids squaring its condition number
        cols = []
        for Aj, (_, R, _, _) in zip(sf.A, scal):
            n = R.shape[0]
            cols.append(np.einsum("ji,kjl,lm->kim", R, Aj, R, optimize=True).reshape(m, n * n))
        if nl:
            cols.append(sf.lp_A * np.sqrt(xl / sl))
        K = np.hstack(cols) if cols else np.zeros((m, 0))
        Rq = None
        if K.shape[1] >= m:
            Rq = sla.qr(K.T, mode="r")[0][:m]
            dq = np.abs(np.diag(Rq))
            if dq.size and dq.min() <= 1e-15 * dq.max():
                Rq = None
        if Rq is None:
            M = _sym(K @ K.T)
            try:
                cf = sla.cho_factor(M + 1e-14 * np.trace(M) / max(m, 1) * np.eye(m))
            except np.linalg.LinAlgError:
                status.status = NUMERICAL_FAILURE
                status.message = "Cholesky breakdown in the Schur complement"
                return None

        def schur_solve(rhs):
            if Rq is None:
                return sla.cho_solve(cf, rhs)
            return sla.solve_triangular(Rq, sla.solve_triangular(Rq, rhs, trans="T"))

        def w_apply(R, Z):
            # W Z W with W = R R^T
            return R @ (R.T @ Z @ R) @ R.T

        def direction(rc_scaled, rc_lp):
            # rc_scaled: rhs of V o (dx + ds) in scaled space, per block
            Rc = [R @ _lyap(v, r) @ R.T for (_, R, _, v), r in zip(scal, rc_scaled)]
            Rc_l = rc_lp / sl
            rhs = Rp - sf.apply(Rc, Rc_l) + sf.apply([w_apply(R, D) for (_, R, _, _), D in zip(scal, Rd)], (xl / sl) * Rd_l)
            dy = schur_solve(rhs)
            ATdy, ATdy_l = sf.adjoint(dy)
            dS = [_sym(D - a) for D, a in zip(Rd, ATdy)]
            dSl = Rd_l - ATdy_l
            dX = [_sym(C - w_apply(R, E)) for C, (_, R, _, _), E in zip(Rc, scal, dS)]
            dXl = Rc_l - (xl / sl) * dSl
            return dX, dXl, dy, dS, dSl

        def steps(dX, dXl, dS, dSl):
            ap = min([_max_step(X, D) for X, D in zip(Xs, dX)] + [_lp_step(xl, dXl)])
            ad = min([_max_step(S, D) for S, D in zip(Ss, dS)] + [_lp_step(sl, dSl)])
            return min(1.0, ap), min(1.0, ad)

        # predictor
        rc_aff = [-np.diag(v * v) for (_, _, _, v) in scal]
        dX, dXl, dy, dS, dSl = direction(rc_aff, -xl * sl)
        ap, ad = steps(dX, dXl, dS, dSl)
        gap_aff = sum(np.sum((X + ap * D) * (S + ad * E)) for X, D, S, E in zip(Xs, dX, Ss, dS)) + float(
            (xl + ap * dXl) @ (sl + ad * dSl)
        )
        sigma = min(1.0, (gap_aff / max(gap, 1e-300)) ** 3)
        if settings.center_gap is not None:
            target_mu = settings.center_gap * max(abs(pobj), 1e-12) / ntot
            sigma = max(sigma, min(1.0, target_mu / max(mu, 1e-300)))
        if pres > PRIMAL_MARGIN * settings.feas_tol and mu / mu0 < 0.1 * pres / pres0:
            # complementarity is running ahead of primal feasibility; slow it down
            sigma = max(sigma, 0.5)
        # corrector
        rc = []
        for (_, R, Ri, v), D, E in zip(scal, dX, dS):
            dxs = Ri @ D @ Ri.T
            dss = R.T @ E @ R
            rc.append(np.diag(sigma * mu - v * v) - _sym(dxs @ dss))
        rc_l = sigma * mu - xl * sl - dXl * dSl
        dX, dXl, dy, dS, dSl = direction(rc, rc_l)
        ap, ad = steps(dX, dXl, dS, dSl)
        ap = min(1.0, settings.step_fraction * ap)
        ad = min(1.0, settings.step_fraction * ad)
        Xs = [_sym(X + ap * D) for X, D in zip(Xs, dX)]
        xl = xl + ap * dXl
        y = y + ad * dy
        Ss = [_sym(S + ad * D) for S, D in zip(Ss, dS)]
        sl = sl + ad * dSl
        if out is not None:
            out.write(f"     step primal {ap:.3f} dual {ad:.3f} sigma {sigma:.3f}\n")
        if ap < 1e-12 and ad < 1e-12:
            status.status = NUMERICAL_FAILURE
            status.message = "step length collapsed"
            return None

    status.status = MAX_ITERS
    return _Iterate(Xs, xl, y, Ss, sl)


def _lp_step(x, dx) -> float:
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


# -- public entry points ----------------------------------------------------

def solve(problem: SdpProblem, settings: Optional[SolverSettings] = None) -> tuple:
    """Solve ``problem``; returns ``(RawSolution, SolverStatus)``.

    Deterministic: fixed starting point, no randomness.
    """
    settings = settings or SolverSettings()
    status = SolverStatus(NUMERICAL_FAILURE)
    sf, red = _reduce(problem)
    nscal = len(problem.scalars)
    it = _solve_standard(sf, settings, status)
    if it is None:
        return RawSolution(status.status, [], np.zeros(nscal)), status
    scal = _recover_scalars(red, it.Xs, it.xl, nscal)
    # judge feasibility on the original equalities, not the reduced ones
    x = _flatten(red.offsets, red.sizes, red.A_full.shape[1], it.Xs)
    full = red.A_full @ x + red.B_lp @ scal[red.lp_ids] + red.B_free @ scal[red.free_ids] - red.b_full
    raw_res = float(np.max(np.abs(full), initial=0.0))
    status.primal_residual = max(status.primal_residual, raw_res)
    if status.status == FEASIBLE and status.primal_residual > settings.feas_tol:
        status.status = NUMERICAL_FAILURE
        status.message = f"unreduced residual {raw_res:.2e} above tolerance"
    return RawSolution(status.status, it.Xs, scal, it.y, it.Ss, it.sl), status


def check_kkt(problem: SdpProblem, raw: RawSolution) -> dict:
    """KKT residuals of a solution, measured against ``problem`` itself.

    Primal residual and eigenvalues use the original equalities.  The dual
    residual and complementarity gap need the dual iterate, so they are
    reported only when ``raw`` carries one (NaN otherwise).
    """
    A, B, b = equality_matrix(problem)
    offsets, nx = variable_layout(problem)
    x = _flatten(offsets, [blk.size for blk in problem.blocks], nx, raw.blocks)
    res = A @ x + B @ raw.scalars - b
    eigs = [float(np.linalg.eigvalsh(_sym(X))[0]) for X in raw.blocks]
    bound = [float(raw.scalars[k] - float(s.lower)) for k, s in enumerate(problem.scalars) if s.lower is not None]
    dual_res = gap = float("nan")
    dual_min_eig = float("nan")
    if raw.y is not None and raw.duals is not None:
        sf, red = _reduce(problem)
        ATy, ATy_l = sf.adjoint(raw.y)
        sl = raw.bound_duals if raw.bound_duals is not None else np.zeros(len(red.lp_ids))
        parts = [np.max(np.abs(C - a - S), initial=0.0) for C, a, S in zip(sf.C, ATy, raw.duals)]
        if sl.size:
            parts.append(float(np.max(np.abs(sf.lp_c - ATy_l - sl))))
        dual_res = float(max(parts, default=0.0))
        xl = raw.scalars[red.lp_ids] - red.lower if red.lp_ids else np.zeros(0)
        gap = float(sum(np.sum(X * S) for X, S in zip(raw.blocks, raw.duals)) + xl @ sl)
        dual_min_eig = min((float(np.linalg.eigvalsh(_sym(S))[0]) for S in raw.duals), default=0.0)
    return {
        "primal_residual": float(np.max(np.abs(res), initial=0.0)),
        "min_eig": min(eigs, default=0.0),
        "block_min_eigs": eigs,
        "bound_slack": min(bound, default=0.0),
        "dual_residual": dual_res,
        "dual_min_eig": dual_min_eig,
        "complementarity_gap": gap,
    }
