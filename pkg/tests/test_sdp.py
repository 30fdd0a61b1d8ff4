import io
from fractions import Fraction as F

import numpy as np
import pytest

from conftest import make_rng
from invforge.sdp import (
    FEASIBLE,
    INFEASIBLE,
    RawSolution,
    SolverSettings,
    check_kkt,
    solve,
)
from invforge.sosgen import Equality, GramBlock, Scalar, SdpProblem


def make_problem(sizes, rows, objective=None, scalars=()):
    """rows: list of ({(block, i, j) or scalar index: coeff}, rhs)."""
    blocks = [GramBlock(f"B{k}", "t", k, tuple((i,) for i in range(n)), ("x",)) for k, n in enumerate(sizes)]
    eqs = []
    for coeffs, rhs in rows:
        c = {}
        for key, v in coeffs.items():
            if isinstance(key, tuple):
                b, i, j = key
                c[("X", b, min(i, j), max(i, j))] = F(v)
            else:
                c[("s", key)] = F(v)
        eqs.append(Equality("t", (0,), c, F(rhs)))
    obj = objective if objective is not None else {k: 1.0 for k in range(len(sizes))}
    return SdpProblem(None, 1, "per-location", "split", 0, 0, blocks, list(scalars), {}, [], eqs, obj)


def random_instance(rng, sizes, m):
    """Random equalities with a known strictly feasible point G^T G + I."""
    X0 = []
    for n in sizes:
        G = rng.standard_normal((n, n))
        X0.append(G.T @ G + np.eye(n))
    rows = []
    for _ in range(m):
        coeffs = {}
        val = F(0)
        for b, n in enumerate(sizes):
            for i in range(n):
                for j in range(i, n):
                    if rng.random() < 0.5:
                        a = F(int(rng.integers(-5, 6)))
                        if a:
                            coeffs[(b, i, j)] = a
                            val += a * F(X0[b][i, j])  # off-diagonal keys carry the symmetric factor
        if coeffs:
            rows.append((coeffs, val))
    return make_problem(sizes, rows)


def test_trace_selector():
    p = make_problem([2], [({(0, 0, 0): 1, (0, 1, 1): 1}, 1)], objective={0: np.diag([1.0, 2.0])})
    raw, st = solve(p)
    assert st.status == FEASIBLE
    assert np.allclose(raw.blocks[0], np.diag([1.0, 0.0]), atol=1e-6)
    assert st.primal_objective == pytest.approx(1.0, abs=1e-7)
    k = check_kkt(p, raw)
    assert k["primal_residual"] <= 1e-8
    assert k["dual_residual"] <= 1e-8
    assert abs(k["complementarity_gap"]) <= 1e-7


def test_trace_minimal_completion():
    p = make_problem([2], [({(0, 0, 0): 1}, 1)])
    raw, st = solve(p)
    assert st.status == FEASIBLE
    assert np.allclose(raw.blocks[0], [[1, 0], [0, 0]], atol=1e-6)


def test_negative_diagonal_is_infeasible():
    p = make_problem([2], [({(0, 0, 0): 1}, 1), ({(0, 1, 1): 1}, -1)])
    _, st = solve(p)
    assert st.status == INFEASIBLE


def test_check_kkt_hand_built_and_perturbed():
    p = make_problem([2], [({(0, 0, 0): 1, (0, 1, 1): 1}, 1)])
    exact = RawSolution(FEASIBLE, [np.diag([1.0, 0.0])], np.zeros(0))
    k = check_kkt(p, exact)
    assert k["primal_residual"] == 0.0
    assert np.isnan(k["dual_residual"])  # no dual iterate supplied
    bumped = RawSolution(FEASIBLE, [np.diag([1.0, 0.0]) + 1e-3 * np.eye(2)], np.zeros(0))
    assert check_kkt(p, bumped)["primal_residual"] == pytest.approx(2e-3, rel=1e-9)


def test_dependent_rows_are_dropped():
    row = ({(0, 0, 0): 1, (0, 1, 1): 1}, 1)
    doubled = ({(0, 0, 0): 2, (0, 1, 1): 2}, 2)
    raw, st = solve(make_problem([2], [row, doubled]))
    assert st.status == FEASIBLE


def test_free_and_bounded_scalars():
    # X00 + s = 2 with s free, X11 - t = 0 with t >= 1
    rows = [({(0, 0, 0): 1, 0: 1}, 2), ({(0, 1, 1): 1, 1: -1}, 0)]
    p = make_problem([2], rows, scalars=[Scalar("s"), Scalar("t", F(1))])
    raw, st = solve(p)
    assert st.status == FEASIBLE
    k = check_kkt(p, raw)
    assert k["primal_residual"] <= 1e-8 and k["bound_slack"] >= -1e-8
    assert raw.blocks[0][1, 1] == pytest.approx(1.0, abs=1e-6)


def test_random_instances_feasible():
    rng = make_rng(1)
    for _ in range(10):
        p = random_instance(rng, [3, 2], 5)
        raw, st = solve(p)
        assert st.status == FEASIBLE
        assert check_kkt(p, raw)["primal_residual"] <= 1e-8


def test_deterministic():
    p = random_instance(make_rng(2), [4, 3], 8)
    r1, s1 = solve(p)
    r2, s2 = solve(p)
    assert s1.iterations == s2.iterations
    for a, b in zip(r1.blocks, r2.blocks):
        assert np.array_equal(a, b)


def test_gap_non_increasing():
    for p in [random_instance(make_rng(3 + k), [3, 3], 6) for k in range(5)]:
        _, st = solve(p)
        h = st.gap_history
        assert all(b <= a * (1 + 1e-9) for a, b in zip(h, h[1:]))


def test_iteration_log():
    buf = io.StringIO()
    solve(make_problem([2], [({(0, 0, 0): 1}, 1)]), SolverSettings(log_stream=buf))
    lines = buf.getvalue().splitlines()
    assert len(lines) >= 2 and "gap" in lines[0]


@pytest.mark.parametrize("kw", [{"feas_tol": 0}, {"duality_gap_tol": -1}, {"max_iters": 0}, {"step_fraction": 1.0}])
def test_settings_validation(kw):
    with pytest.raises(ValueError):
        SolverSettings(**kw)


def test_max_iters_reported():
    p = random_instance(make_rng(9), [4], 6)
    _, st = solve(p, SolverSettings(max_iters=2))
    assert st.status == "MaxIters"
