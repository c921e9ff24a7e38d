import random
from fractions import Fraction

import pytest

from qcondsym.catalog import apply_rewrites, instantiate, load_entry
from qcondsym.condsym import build_manifold, invariance_residuals
from qcondsym.jetspace import VectorField, translation
from qcondsym.kirchhoff import KirchhoffError, RDOriginal, antiderivative, to_canonical, transform_operator
from qcondsym.symkernel import Jet, cancel, const, diff_partial, equal_canonical, func, jet, param, power, var

U, V, u, v = jet("U"), jet("V"), jet("u"), jet("v")
k, l, l1, l2 = param("k"), param("l"), param("lambda1"), param("lambda2")
F = func("F", [U, V])
G = func("G", [U, V])


def test_unit_diffusivity_is_the_identity():
    canon, rec = to_canonical(RDOriginal(("U", "V"), (const(1), const(1)), (F, G)))
    assert rec.forward == (U, V)
    assert canon.d == (const(1), const(1))
    assert canon.C[0] == -func("F", [u, v])


def test_power_diffusivity():
    canon, rec = to_canonical(RDOriginal(("U", "V"), (power(U, k), const(1)), (F, G)))
    assert rec.forward[0] == power(U, k + 1) * power(k + 1, -1)
    assert equal_canonical(diff_partial(rec.forward[0], Jet("U")), power(U, k))
    want = power((k + 1) * u, -k / (k + 1))
    assert equal_canonical(canon.d[0], want)
    for val in (0.5, 1.0, 2.0):
        fwd = rec.eval_forward(0, val, {"k": 2})
        assert rec.eval_inverse(0, fwd, {"k": 2}) == pytest.approx(val, rel=1e-12)


def test_reciprocal_diffusivity_is_rejected():
    with pytest.raises(KirchhoffError, match="logarithmic"):
        to_canonical(RDOriginal(("U", "V"), (power(U, -1), const(1)), (F, G)))


def test_non_power_diffusivity_is_rejected():
    with pytest.raises(KirchhoffError, match="non-integrable"):
        antiderivative(func("h", [U]), "U")


def test_numeric_fallback_can_be_disabled():
    # U + U^3 has no closed-form inverse in the supported language
    orig = RDOriginal(("U", "V"), (1 + U * U * U, const(1)), (F, G))
    with pytest.raises(KirchhoffError, match="numeric fallback"):
        to_canonical(orig, numeric_fallback=False)
    canon, rec = to_canonical(orig)
    assert rec.inverse[0] is None
    q = VectorField(1, 0, (U, V), ("U", "V"))
    with pytest.raises(KirchhoffError, match="numeric fallback"):
        transform_operator(q, rec, numeric_fallback=False)


@pytest.mark.parametrize("D", ["power", "sum"])
def test_round_trip_at_random_points(D):
    diff = power(U, Fraction(3, 2)) if D == "power" else 1 + U * U
    _, rec = to_canonical(RDOriginal(("U", "V"), (diff, const(1)), (F, G)))
    rng = random.Random(11)
    worst = 0.0
    for _ in range(200):
        x = rng.uniform(0.2, 3)
        back = rec.eval_inverse(0, rec.eval_forward(0, x))
        worst = max(worst, abs(back - x) / abs(x))
    assert worst < 1e-10


def test_time_translation_is_unchanged():
    _, rec = to_canonical(RDOriginal(("U", "V"), (power(U, k), power(V, l)), (F, G)))
    q = transform_operator(translation("t", ("U", "V")), rec)
    assert q == translation("t", ("u", "v"))


def test_row2_operator_becomes_constant_shift():
    _, rec = to_canonical(RDOriginal(("U", "V"), (power(U, k), power(V, l)), (F, G)))
    q_star = VectorField(1, 0, (l1 * power(U, -k), l2 * power(V, -l)), ("U", "V"))
    q = transform_operator(q_star, rec)
    assert q.xi0 == const(1) and q.xi1.is_zero
    assert q.eta == (l1, l2)


def test_example_restrictions_are_preserved():
    t = var("t")
    _, rec = to_canonical(RDOriginal(("U", "V"), (power(U, 2), 1 + V * V), (F, G)))
    q_star = VectorField(1 + t, 0, (t * U, V * V), ("U", "V"))
    q = transform_operator(q_star, rec)
    assert q.xi1.is_zero
    assert diff_partial(q.eta[0], Jet("v")).is_zero
    assert diff_partial(q.eta[1], Jet("u")).is_zero


@pytest.mark.parametrize("row", [1, 2, 4])
def test_symmetry_is_transported(row):
    entry = load_entry(row)
    inst = instantiate(entry)
    orig, q_star = inst
    evo = orig.to_evolution()
    res_orig = invariance_residuals(evo, q_star, build_manifold(evo, q_star, (1, 2)))
    canon, rec = to_canonical(orig)
    q = transform_operator(q_star, rec)
    res_canon = invariance_residuals(canon, q, build_manifold(canon, q, (1, 2)))
    # p'' is replaced through the side constraint for rows with p(x)
    assert all(cancel(apply_rewrites(r, inst.rewrites)).is_zero for r in res_orig)
    assert all(cancel(apply_rewrites(r, inst.rewrites)).is_zero for r in res_canon)
