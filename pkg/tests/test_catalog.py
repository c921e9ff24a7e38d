from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcondsym.catalog import (
    CatalogError,
    RestrictionError,
    expected_classification,
    instantiate,
    list_entries,
    load_entry,
    parse_assignments,
    pretty,
    resolve_params,
    verify_claim,
    verify_entry,
)
from qcondsym.pdeparse import parse_source, render_source
from qcondsym.jetspace import X
from qcondsym.symkernel import Jet, const, equal_canonical, diff_partial, exp, func, jet, param, power, slot, var

U, V = jet("U"), jet("V")
half = Fraction(1, 2)


def test_five_entries():
    rows = list_entries()
    assert [e.row for e in rows] == [1, 2, 3, 4, 5]


def test_row1_operator_and_constraint():
    e = load_entry(1)
    q = e.operator
    p = func("p", [var("x")])
    assert q.xi0 == const(1) and q.xi1.is_zero
    assert q.eta[0].is_zero and q.eta[1] == 2 * p * power(V, half)
    lam = param("lambda")
    assert e.side_constraints == [func("p", [var("x")], [2]) - p * p - lam * p]
    assert [r.text for r in e.restrictions][:1] == ["p != 0"]


def test_row3_system_is_symmetric():
    e = load_entry(3)
    lam = param("lambda")
    omega = power(U, half) - power(V, half)
    assert e.omega == omega
    sys = e.system
    assert sys.D == (power(U, -half), power(V, -half))
    assert sys.F[0] == -2 * lam * power(U, half) + func("f", [omega])


def test_row5_omega():
    e = load_entry(5)
    k, l, l1, l2, l3, l4 = (param(n) for n in ("k", "l", "lambda1", "lambda2", "lambda3", "lambda4"))
    want = (power(U, k + 1) - l1) * power(power(V, l + 1) - l3, -l2 * (k + 1) / (l4 * (l + 1)))
    assert e.omega == want


def test_row4_reads_exp_of_the_power():
    k, l, l1, l2, l3 = (param(n) for n in ("k", "l", "lambda1", "lambda2", "lambda3"))
    denom = power(power(V, l + 1) - l3, l1 * (k + 1) / (l2 * (l + 1)))
    assert equal_canonical(load_entry(4).omega * denom, exp(power(U, k + 1)))


def test_entries_round_trip_through_the_grammar():
    for e in list_entries():
        again = parse_source(render_source(e.spec))
        assert again.system == e.spec.system
        assert again.operator == e.operator


def test_row1_p_sample():
    x = slot(0)
    inst = instantiate(load_entry(1), {"lambda": 0}, p_sample=6 * x**-2)
    assert not any(getattr(a, "name", None) == "p" for a in inst.operator.eta[1].atoms)
    # p'' = 36 x^-4 = p^2
    p = 6 * var("x") ** -2
    d2 = diff_partial(diff_partial(p, X), X)
    assert d2 == p * p
    with pytest.raises(RestrictionError, match="side constraint"):
        instantiate(load_entry(1), {"lambda": 1}, p_sample=6 * x**-2)
    with pytest.raises(RestrictionError, match="p≠0"):
        instantiate(load_entry(1), {"lambda": 0}, p_sample=const(0))


def test_row2_alpha():
    v = resolve_params(load_entry(2), {"k": 1, "l": 1, "lambda1": 2, "lambda2": 1})
    assert v["alpha"] == 2


def test_row2_restriction_messages():
    with pytest.raises(RestrictionError, match="restriction λ₂≠0 violated"):
        instantiate(load_entry(2), {"lambda2": 0})
    with pytest.raises(RestrictionError, match="λ₁²"):
        instantiate(load_entry(2), {"lambda1": 0, "l": 0})
    # the same parameters describe a Lie operator when the guard is lifted
    instantiate(load_entry(2), {"lambda1": 0, "l": 0}, allow_lie=True)


def test_row4_disjunctive_restriction():
    with pytest.raises(RestrictionError, match="violated"):
        instantiate(load_entry(4), {"lambda1": 0, "lambda3": 0, "k": 0, "l": 0})
    instantiate(load_entry(4), {"lambda1": 0, "lambda3": 0, "k": 1, "l": 0})


def test_parameter_errors():
    with pytest.raises(CatalogError, match="no parameter"):
        resolve_params(load_entry(1), {"mu": 1})
    with pytest.raises(CatalogError, match="determined"):
        resolve_params(load_entry(2), {"alpha": 1})


def test_assignment_parsing_and_pretty():
    assert parse_assignments("k=1, lambda=1/2") == {"k": Fraction(1), "lambda": Fraction(1, 2)}
    assert pretty("lambda2 != 0") == "λ₂≠0"


@pytest.mark.parametrize(
    "row, params, first, lie",
    [
        (1, {}, True, False),
        (2, {"lambda1": 0, "l": 1}, True, False),
        (2, {"lambda1": 2, "l": 0}, True, False),
        (2, {"lambda1": 2, "l": 1}, False, False),
        (2, {"lambda1": 0, "l": 0}, True, True),
        (3, {}, False, False),
    ],
)
def test_expected_classification(row, params, first, lie):
    c = expected_classification(load_entry(row), params)
    assert c.nonclassical
    assert c.first_type == first and c.lie_degenerate == lie
    assert c.trace


def test_computed_rule_flags_the_k_zero_case():
    # k = 0 makes d1 constant, so Q(u2) alone already works
    c = expected_classification(load_entry(2), {"k": 0, "lambda1": 2, "l": 1})
    assert c.first_type and c.via == (2,)
    assert any("stated rule" in line for line in c.trace)
    res = verify_claim(load_entry(2), "first_type", {"k": 0, "lambda1": 2, "l": 1}, n_points=30, expected=True)
    assert res.passed and dict(res.branches)[(2,)] == 0


@pytest.mark.parametrize("row", [1, 2, 3, 4, 5])
def test_catalog_predictions_are_confirmed(row):
    e = load_entry(row)
    for params in e.grid:
        for res in verify_entry(e, params, n_points=30):
            assert res.agrees, (row, params, res.kind, res.max_violation)
            if res.kind == "nonclassical":
                assert res.passed


def test_row3_first_type_is_a_confirmed_fail():
    res = verify_claim(load_entry(3), "first_type", n_points=50)
    assert not res.passed and res.confirmed_fail


def test_lie_case_of_row2():
    res = verify_claim(load_entry(2), "lie", {"lambda1": 0, "l": 0}, allow_lie=True, n_points=30)
    assert res.passed


def test_fully_numeric_p_mode():
    for row in (1, 3):
        res = verify_claim(load_entry(row), "nonclassical", {"lambda": 0}, p_mode="sample", n_points=30)
        assert res.passed


@given(
    st.sampled_from([Fraction(1, 2), Fraction(1), Fraction(2), Fraction(-1, 2)]),
    st.sampled_from([Fraction(1, 2), Fraction(1), Fraction(2)]),
    st.sampled_from([Fraction(0), Fraction(1), Fraction(-2)]),
)
@settings(max_examples=15, deadline=None)
def test_row2_prediction_matches_numerics(k, l, lam1):
    params = {"k": k, "l": l, "lambda1": lam1, "lambda2": 1}
    if lam1 == 0 and l == 0:
        return
    want = expected_classification(load_entry(2), params).first_type
    res = verify_claim(load_entry(2), "first_type", params, n_points=20, expected=want)
    assert res.agrees


def test_show_lists_the_source():
    text = load_entry(2).show()
    assert text.startswith("# row 2")
    assert "[operator]" in text


def test_operator_shape_is_the_example_shape():
    for e in list_entries():
        q = instantiate(e).operator
        assert q.xi1.is_zero
        assert diff_partial(q.eta[0], Jet("V")).is_zero and diff_partial(q.eta[1], Jet("U")).is_zero
