from fractions import Fraction as F

import pytest

from conftest import example_text
from invforge.model import ModelError, bounding_box, parse_system, serialize_system, validate
from invforge.poly import PolySyntaxError, parse_poly


def test_example1_shape(ex1):
    assert ex1.variables == ("x", "y")
    assert len(ex1.locations) == 1 and len(ex1.transitions) == 0
    theta = list(ex1.initial_set)
    assert len(theta) == 3
    V = ex1.variables
    assert theta[0] == parse_poly("(4 - x)*(x - 9/2)", V)
    assert {theta[1], theta[2]} == {parse_poly("y - 1", V), parse_poly("1 - y", V)}
    f = ex1.locations[0].field
    assert f[0] == parse_poly("-11/2*y + y^2", V)
    assert f[1] == parse_poly("6*x - x^2", V)


def test_example3_reset(ex3):
    assert len(ex3.locations) == 2 and len(ex3.transitions) == 2
    tr = ex3.transitions[0]
    assert (tr.source, tr.target) == ("l1", "l2")
    expected = parse_poly("1/100 - (x1' - 13/5)^2 - (x2' - 14/5)^2", ex3.joint_variables)
    assert list(tr.reset) == [expected]
    assert ex3.location("l2").unsafe_set is None


@pytest.mark.parametrize("k", [1, 2, 3])
def test_round_trip(k):
    s = parse_system(example_text(f"example{k}.hs"))
    again = parse_system(serialize_system(s))
    assert again == s
    assert again.digest() == s.digest()


def test_examples_validate_cleanly(ex1, ex2, ex3):
    for s in (ex1, ex2, ex3):
        assert validate(s) == []


def test_disjoint_initial_set_warns():
    s = parse_system(
        "vars x\nlocation l\n  field 1\n  invariant 5 - x >= 0\ninit l\n  set x - 10 >= 0 ; 11 - x >= 0\n"
    )
    assert validate(s)


def test_undeclared_location_is_error():
    with pytest.raises(ModelError):
        parse_system("vars x\nlocation l\n  field 1\n  invariant 1 >= 0\ntransition l -> m\n  guard 1 >= 0\n"
                     "  reset x' - x >= 0\ninit l\n  set x >= 0\n")


def test_missing_init_and_bad_field():
    with pytest.raises(ModelError):
        parse_system("vars x\nlocation l\n  field 1\n  invariant 1 >= 0\n")
    with pytest.raises(ModelError):
        parse_system("vars x y\nlocation l\n  field 1\n  invariant 1 >= 0\ninit l\n  set x >= 0\n")


def test_primed_names_only_in_resets():
    with pytest.raises((ModelError, PolySyntaxError)):
        parse_system("vars x\nlocation l\n  field x'\n  invariant 1 >= 0\ninit l\n  set x >= 0\n")


def test_syntax_error_reports_line():
    with pytest.raises((ModelError, PolySyntaxError)) as err:
        parse_system("vars x\nlocation l\n  field 1 +\n  invariant 1 >= 0\ninit l\n  set x >= 0\n")
    assert "line 3" in str(err.value)


def test_decimals_are_exact(ex3):
    unsafe = list(ex3.location("l1").unsafe_set)[0]
    assert unsafe.coefficient((0, 0)) == F(4, 25) - 2


def test_bounding_box(ex1):
    assert bounding_box(list(ex1.initial_set), 2) == [(4.0, 4.5), (1.0, 1.0)]
    assert bounding_box(list(ex1.locations[0].invariant_set), 2) == [(1.0, 5.0), (1.0, 5.0)]
