from fractions import Fraction as F

import numpy as np
import pytest

from conftest import example_text
from test_sdp import make_problem
from golden_data import IDENTITIES, PHI, SQUARES, square_list
from invforge.model import parse_system
from invforge.poly import parse_poly
from invforge.scaling import choose_scaling, rescale_system
from invforge.sdp import FEASIBLE, INFEASIBLE, solve
from invforge.sosgen import (
    INDUCTIVE,
    PER_LOCATION,
    SHARED,
    block_equalities,
    build_stage1,
    build_stage2,
    extract_solution,
    float_residuals,
    residual_targets,
)


def test_example1_has_three_families(ex1):
    p = build_stage1(ex1, 4, 5, PER_LOCATION)
    assert [i.family for i in p.identities] == ["init", "flow", "unsafe"]
    assert [i.name for i in p.identities] == ["init", "flow[l1]", "unsafe[l1]"]
    assert len(p.templates["l1"].monomials) == 15
    # multipliers: one per constraint of Theta, Psi and X_u
    per_identity = {i.name: len(i.block_ids) for i in p.identities}
    assert per_identity == {"init": 4, "flow[l1]": 3, "unsafe[l1]": 3}


def test_inductive_example3_shares_one_template(ex3):
    p = build_stage1(ex3, 2, 1, INDUCTIVE)
    assert list(p.templates) == ["*"] or len({t.coeff_ids for t in p.templates.values()}) == 1
    tpl = next(iter(p.templates.values()))
    assert len(tpl.monomials) == 6
    names = [i.name for i in p.identities]
    assert names == ["init", "discrete[l1->l2#0]", "discrete[l2->l1#1]", "flow[l1]", "flow[l2]", "unsafe[l1]"]


def test_split_frame_discrete_blocks_live_over_joint_variables(ex3):
    p = build_stage1(ex3, 2, 1, PER_LOCATION)
    ident = p.identity("discrete[l1->l2#0]")
    assert ident.variables == ex3.joint_variables
    assert all(p.blocks[b].variables == ex3.joint_variables for b in ident.block_ids)


def test_every_equality_touches_a_variable(ex2):
    p = build_stage1(ex2, 2, 1, PER_LOCATION)
    assert p.equalities
    assert all(eq.coeffs for eq in p.equalities)
    assert all(isinstance(eq.rhs, F) for eq in p.equalities)


def test_equality_count_is_distinct_monomials(ex3):
    p = build_stage1(ex3, 2, 1, PER_LOCATION)
    for ident in p.identities:
        monos = [eq.monomial for eq in p.equalities if eq.identity == ident.name]
        assert len(monos) == len(set(monos))


def test_constant_template_with_unsafe_set_is_infeasible():
    s = parse_system("vars x\nlocation l\n  field 0\n  invariant 1 >= 0\n  unsafe 1 >= 0\ninit l\n  set 1 >= 0\n")
    p = build_stage1(s, 0, 0, PER_LOCATION)
    assert len(p.templates["l"].monomials) == 1
    _, st = solve(p)
    assert st.status == INFEASIBLE


def _one_var_problem():
    # init identity: phi - M1 * 1 = m^T M0 m over basis (1, x)
    s = parse_system("vars x\nlocation l\n  field 0\n  invariant 1 >= 0\ninit l\n  set 1 >= 0\n")
    return s, build_stage1(s, 2, 1, PER_LOCATION)


def test_coefficient_matching_micro_example():
    s, p = _one_var_problem()
    phi = {"l": parse_poly("x^2 + 2*x + 1", s.variables)}
    fixed = {b.name: [[F(0)] * b.size for _ in range(b.size)] for b in p.blocks if b.index}
    margins = {sc.name: F(1) for sc in p.scalars if sc.name.startswith("eps")}
    st2 = build_stage2(p, phi, fixed, margins)
    bid = [k for k, b in enumerate(st2.blocks) if b.identity == "init"][0]
    assert st2.blocks[bid].basis == ((0,), (1,))
    rows, rhs = block_equalities(st2, bid)
    got = {tuple(sorted(r.items())): b for r, b in zip(rows, rhs)}
    assert got == {
        (((0, 0), F(1)),): F(1),
        (((0, 1), F(2)),): F(2),
        (((1, 1), F(1)),): F(1),
    }
    X = np.array([[1.0, 1.0], [1.0, 1.0]])
    for r, b in zip(rows, rhs):
        assert sum(float(c) * X[i, j] for (i, j), c in r.items()) == float(b)


def test_single_square_residual():
    s, p = _one_var_problem()
    phi = {"l": parse_poly("x^2", s.variables)}
    fixed = {b.name: [[F(0)] * b.size for _ in range(b.size)] for b in p.blocks if b.index}
    st2 = build_stage2(p, phi, fixed, {sc.name: F(1) for sc in p.scalars if sc.name.startswith("eps")})
    bid = [k for k, b in enumerate(st2.blocks) if b.identity == "init"][0]
    rows, rhs = block_equalities(st2, bid)
    sub = make_problem([2], [({(0, i, j): c for (i, j), c in r.items()}, b) for r, b in zip(rows, rhs)])
    raw, st = solve(sub)
    assert st.status == FEASIBLE
    assert np.allclose(raw.blocks[0], [[0, 0], [0, 1]], atol=1e-6)


def _published_fixed(problem):
    """Constant multipliers from the published certificate, padded to each basis."""
    fixed = {}
    for blk in problem.blocks:
        if blk.index == 0:
            continue
        c = F(IDENTITIES[blk.identity][1][blk.index - 1])
        rows = [[F(0)] * blk.size for _ in range(blk.size)]
        rows[0][0] = c  # basis starts with the constant monomial
        fixed[blk.name] = rows
    return fixed


def test_stage2_residuals_match_published_sos_terms(ex3):
    p = build_stage1(ex3, 2, 1, INDUCTIVE, frame=SHARED)
    phi = parse_poly(PHI, ex3.variables)
    margins = {"eps1[l1]": F(26, 931), "eps1[l2]": F(1259, 931), "eps2[l1]": F(58, 931)}
    targets = residual_targets(p, {l: phi for l in ("l1", "l2", "*")}, _published_fixed(p), margins)
    for ident, (free, _, _) in IDENTITIES.items():
        _, squares = square_list(free)
        sos = sum((w * h * h for w, h in squares), parse_poly("0", ex3.variables))
        assert targets[ident] == sos, ident
        if free != "mu0":
            assert targets[ident] == parse_poly(SQUARES[free][0], ex3.variables)
    st2 = build_stage2(p, {l: phi for l in ("l1", "l2", "*")}, _published_fixed(p), margins)
    assert len(st2.blocks) == 6


def test_printed_mu0_differs_from_its_squares(ex3):
    # the listed square decomposition is what the unsafe identity needs; the
    # expanded polynomial printed next to it is a different polynomial
    printed, squares = square_list("mu0")
    sos = sum((w * h * h for w, h in squares), parse_poly("0", ex3.variables))
    assert sos != printed
    assert sos == parse_poly("4992/3325 + 809/931*x1 + 197/133*x2 + 325/931*x1^2 + 564/931*x2^2", ex3.variables)


@pytest.mark.parametrize("k,mode,d,e", [(2, PER_LOCATION, 2, 1), (3, INDUCTIVE, 2, 1), (3, PER_LOCATION, 2, 1)])
def test_float_reconstruction(k, mode, d, e, request):
    system = request.getfixturevalue(f"ex{k}")
    p = build_stage1(system, d, e, mode)
    raw, st = solve(p)
    assert st.status == FEASIBLE
    sol = extract_solution(p, raw)
    assert float_residuals(p, sol) <= 1e-6
    for X in sol.gram_values.values():
        assert np.array_equal(X, X.T)
    if mode == INDUCTIVE:
        vals = list(sol.template_values.values())
        assert all(np.array_equal(vals[0], v) for v in vals)


def test_extract_propagates_infeasible(ex1):
    # solved in the rescaled coordinates, as the pipeline does
    p = build_stage1(rescale_system(ex1, choose_scaling(ex1)), 1, 5, PER_LOCATION)
    raw, st = solve(p)
    assert st.status == INFEASIBLE
    sol = extract_solution(p, raw)
    assert sol.status == INFEASIBLE and not sol.gram_values and not sol.template_values


def test_duplicate_constraint_keeps_feasibility(ex3):
    dup = example_text("example3.hs").replace(
        "set 0.25 - (x1-1.5)^2 - x2^2 >= 0", "set 0.25 - (x1-1.5)^2 - x2^2 >= 0 ; 0.25 - (x1-1.5)^2 - x2^2 >= 0"
    )
    s = parse_system(dup)
    base = build_stage1(ex3, 2, 1, INDUCTIVE)
    more = build_stage1(s, 2, 1, INDUCTIVE)
    assert len(more.blocks) == len(base.blocks) + 1
    assert solve(more)[1].status == solve(base)[1].status == FEASIBLE


def test_dump_format(ex3):
    text = build_stage1(ex3, 2, 1, INDUCTIVE).dump()
    assert "block 0 init/M0 size 3" in text
    assert any(line.startswith("eq 0: ") for line in text.splitlines())
