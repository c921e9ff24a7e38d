import random

import pytest

from qcondsym import read_data
from qcondsym.catalog import instantiate, load_entry
from qcondsym.condsym import (
    SWAP_UV,
    CondsymError,
    build_manifold,
    compare_systems,
    determining_system,
    impose_zero,
    invariance_residuals,
    normalize_xi0,
    reduce_system,
    rename_system,
    restrict_example,
    split_determining,
    system_from_source,
)
from qcondsym.jetspace import VectorField, translation
from qcondsym.kirchhoff import RDCanonical, to_canonical, transform_operator
from qcondsym.numoracle import random_polynomial
from qcondsym.pdeparse import parse_source
from qcondsym.symkernel import Jet, cancel, const, equal_canonical, func, jet, power, substitute_functions, var

SRC = parse_source(read_data("rd_generic.sys"))
S, Q = SRC.system, SRC.operator
ASM = tuple(SRC.assumptions)
u, v, ux, vx = jet("u"), jet("v"), jet("u", 0, 1), jet("v", 0, 1)
t, x = var("t"), var("x")


def ref(name):
    return system_from_source(parse_source(read_data("reference", name)))


@pytest.fixture(scope="module")
def first_type():
    return determining_system(S, Q, (1,), assumptions=ASM)


@pytest.fixture(scope="module")
def nonclassical():
    return determining_system(S, Q, (1, 2), assumptions=ASM)


# --- manifolds ------------------------------------------------------------------


def test_first_type_manifold_eliminates_three_jets():
    man = build_manifold(S, Q, (1,))
    assert set(man.eliminated) == {Jet("u", 0, 2), Jet("v", 0, 2), Jet("u", 1, 0)}


def test_nonclassical_manifold_eliminates_four_jets():
    man = build_manifold(S, Q, (1, 2))
    assert set(man.eliminated) == {Jet("u", 0, 2), Jet("v", 0, 2), Jet("u", 1, 0), Jet("v", 1, 0)}


def test_lie_manifold_is_the_system():
    man = build_manifold(S, Q, ())
    assert man.constraints == tuple(S.equations())
    assert set(man.eliminated) == {Jet("u", 0, 2), Jet("v", 0, 2)}


def test_plan_is_triangular():
    man = build_manifold(S, Q, (1, 2), diff_consequences=True)
    done = set()
    for j, sol in man.plan:
        assert j not in sol.atoms
        done.add(j)
    assert len(done) == len(man.plan)


def test_manifold_errors():
    with pytest.raises(CondsymError, match="xi0-zero branch unsupported"):
        build_manifold(S, translation("x", ("u", "v")), (1,))
    with pytest.raises(CondsymError, match="indices out of range"):
        build_manifold(S, Q, (3,))
    with pytest.raises(CondsymError, match="indices out of range"):
        build_manifold(S, Q, (0,))


# --- residuals ------------------------------------------------------------------


@pytest.mark.parametrize("direction", ["t", "x"])
@pytest.mark.parametrize("indices", [(), (1,), (2,), (1, 2)])
def test_translations_leave_no_residual(direction, indices):
    q = translation(direction, ("u", "v"))
    man = build_manifold(S, q, indices, allow_xi0_zero=True)
    assert all(r.is_zero for r in invariance_residuals(S, q, man))


def test_row2_operator_on_its_kirchhoff_image():
    inst = instantiate(load_entry(2), {"k": 2, "l": 3, "lambda1": 1, "lambda2": 2})
    canon, rec = to_canonical(inst.system)
    q = transform_operator(inst.operator, rec)
    man = build_manifold(canon, q, (1, 2))
    assert all(cancel(r).is_zero for r in invariance_residuals(canon, q, man))


def test_first_type_residual_is_polynomial_in_the_free_jets():
    # the mixed v_tx also survives on the manifold; its coefficients are
    # xi0*xi0_x, xi0*xi0_u, xi0*xi0_v, which the other groups already imply
    free = {Jet("u", 0, 1), Jet("v", 0, 1), Jet("v", 1, 0), Jet("v", 1, 1)}
    man = build_manifold(S, Q, (1,), diff_consequences=True)
    for r in invariance_residuals(S, Q, man):
        assert {j for j in r.jets() if j.order >= 1} <= free
    # without the differential consequences u_tx stays free as well
    man = build_manifold(S, Q, (1,))
    jets = set().union(*({j for j in r.jets() if j.order >= 1} for r in invariance_residuals(S, Q, man)))
    assert jets - free == {Jet("u", 1, 1)}


# --- splitting and comparison -----------------------------------------------------


def test_split_simple_linear_residual():
    a, b = func("a", [u]), func("b", [u, v])
    ds = split_determining([a * ux + b])
    assert set(ds.equations) == {a, b}
    assert ds.basis == (Jet("u", 0, 1),)


def test_split_drops_zero_and_duplicates():
    a = func("a", [u])
    ds = split_determining([a * ux + a, 2 * a * vx, const(0)])
    assert ds.equations == (a,)


def test_no_equation_contains_a_basis_atom(first_type, nonclassical):
    for ds in (first_type, nonclassical):
        for e in ds.equations:
            assert not e.is_zero
            assert set(ds.basis).isdisjoint(e.atoms)


def test_generated_first_type_matches_reference(first_type):
    assert compare_systems(first_type, ref("first_type.sys")).status in ("identical", "equivalent-up-to-combination")


def test_generated_nonclassical_matches_reference(nonclassical):
    assert compare_systems(nonclassical, ref("nonclassical.sys")).status in ("identical", "equivalent-up-to-combination")


def test_amended_manifold_adds_nothing(first_type):
    amended = determining_system(S, Q, (1,), diff_consequences=True, assumptions=ASM)
    a, b = reduce_system(first_type, ASM), reduce_system(amended, ASM)
    assert a.equations == b.equations
    assert compare_systems(amended, ref("first_type.sys")).status == compare_systems(first_type, ref("first_type.sys")).status


def test_system_vs_itself(first_type):
    rep = compare_systems(first_type, first_type)
    assert rep.status == "identical"
    assert len(rep.matched_pairs) == len(first_type)


def test_mismatch_is_reported(first_type, nonclassical):
    rep = compare_systems(first_type, nonclassical)
    assert rep.status == "mismatch"
    assert rep.unmatched_a or rep.unmatched_b


def test_generation_is_deterministic(first_type):
    again = determining_system(S, Q, (1,), assumptions=ASM)
    assert again.equations == first_type.equations and again.labels == first_type.labels


# --- normalization and the example restriction ---------------------------------------


def test_normalized_nonclassical_matches_reference(nonclassical):
    nn = normalize_xi0(nonclassical)
    assert nn.meta["xi0_free"]
    rep = compare_systems(nn, ref("nonclassical_normalized.sys"), unknowns=("xi0", "xi", "eta1", "eta2"))
    assert rep.status in ("identical", "equivalent-up-to-combination")


def test_normalizing_a_unit_operator_is_identity():
    q = VectorField(1, x * u, (u * v, t), ("u", "v"))
    assert normalize_xi0(q) == q


def test_scaled_operator_normalizes_to_the_same():
    c = 1 + t * t
    q = VectorField(u, x, (u * v, v), ("u", "v"))
    cq = VectorField(c * u, c * x, (c * u * v, c * v), ("u", "v"))
    assert normalize_xi0(cq) == normalize_xi0(q)


def test_normalizing_xi0_zero_operator_fails():
    with pytest.raises(CondsymError, match="xi0-zero"):
        normalize_xi0(translation("x", ("u", "v")))


def test_example_restriction_reproduces_references(first_type, nonclassical):
    enc = restrict_example(nonclassical)
    eft = restrict_example(first_type)
    assert len(enc) == 2 and len(eft) == 3
    assert compare_systems(enc, ref("example_nonclassical.sys")).status == "identical"
    assert compare_systems(eft, ref("example_first_type.sys")).status == "identical"


def test_example_systems_agree_when_d2_is_constant(first_type, nonclassical):
    za = normalize_xi0(impose_zero(restrict_example(nonclassical), "d2", (1,)))
    zb = normalize_xi0(impose_zero(restrict_example(first_type), "d2", (1,)))
    rep = compare_systems(za, zb, unknowns=("xi0", "xi", "eta1", "eta2"))
    assert rep.status in ("identical", "equivalent-up-to-combination")


def test_example_systems_differ_in_general(first_type, nonclassical):
    za = normalize_xi0(restrict_example(nonclassical))
    zb = normalize_xi0(restrict_example(first_type))
    assert compare_systems(za, zb, unknowns=("xi0", "xi", "eta1", "eta2")).status == "mismatch"


# --- invariants ---------------------------------------------------------------------


def test_index_swap_covariance(first_type):
    second = determining_system(S, Q, (2,), assumptions=ASM)
    swapped = rename_system(second, *SWAP_UV)
    assert compare_systems(swapped, first_type).status == "identical"


def _autonomous_samples():
    """Three sampled autonomous systems with polynomial d and C."""
    out = []
    for seed in range(3):
        rng = random.Random(seed)
        C1 = random_polynomial("C1", 2, rng).body
        C2 = random_polynomial("C2", 2, rng).body
        d1 = 1 + random_polynomial("d1", 1, rng, degree=2).body ** 2
        d2 = 2 + random_polynomial("d2", 1, rng, degree=1).body ** 2
        bind = lambda e: substitute_functions(func("h", [u, v]), {"h": e})  # noqa: E731
        out.append(RDCanonical(("u", "v"), (substitute_functions(func("h", [u]), {"h": d1}),
                                            substitute_functions(func("h", [v]), {"h": d2})), (bind(C1), bind(C2))))
    return out


@pytest.mark.parametrize("sys_index", [0, 1, 2])
@pytest.mark.parametrize("direction", ["t", "x"])
def test_hierarchy_of_manifolds(sys_index, direction):
    sysm = _autonomous_samples()[sys_index]
    q = translation(direction, ("u", "v"))
    chain = [(), (1,), (2,), (1, 2)]
    zero = [all(r.is_zero for r in invariance_residuals(sysm, q, build_manifold(sysm, q, i, allow_xi0_zero=True))) for i in chain]
    # Lie => first type (either index) => non-classical
    for a, b in [(0, 1), (0, 2), (1, 3), (2, 3)]:
        assert not zero[a] or zero[b]
    assert all(zero)


def test_residuals_scale_with_the_operator():
    """Non-classical residuals of c(t)*Q are c(t)^n times those of Q, so they vanish together."""
    sysm = _autonomous_samples()[0]
    q = VectorField(1 + u * u, x, (v, u * t), ("u", "v"))
    c = 2 + t * t
    cq = VectorField(c * q.xi0, c * q.xi1, tuple(c * e for e in q.eta), ("u", "v"))
    rq = invariance_residuals(sysm, q, build_manifold(sysm, q, (1, 2)))
    rc = invariance_residuals(sysm, cq, build_manifold(sysm, cq, (1, 2)))
    for a, b in zip(rq, rc):
        assert not a.is_zero
        assert any(equal_canonical(b, s * power(c, n) * a) for n in range(4) for s in (1, -1))
