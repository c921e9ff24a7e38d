"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (lines are printed in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""

import random
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from exprgen import SCOPE, UX, UXX, gen_expr, gen_polynomial  # noqa: E402
from qcondsym import read_data  # noqa: E402
from qcondsym.catalog import load_entry, verify_claim  # noqa: E402
from qcondsym.condsym import (  # noqa: E402
    build_manifold,
    compare_systems,
    determining_system,
    impose_zero,
    invariance_residuals,
    normalize_xi0,
    reduce_system,
    restrict_example,
    system_from_source,
)
from qcondsym.jetspace import VectorField, translation  # noqa: E402
from qcondsym.kirchhoff import RDCanonical, RDOriginal, to_canonical, transform_operator  # noqa: E402
from qcondsym.numoracle import random_polynomial  # noqa: E402
from qcondsym.pdeparse import parse_expr, parse_source, render  # noqa: E402
from qcondsym.symkernel import (  # noqa: E402
    Jet,
    collect,
    const,
    diff_partial,
    equal_canonical,
    func,
    jet,
    normalize,
    param,
    power,
    substitute_functions,
)

TOL = 1e-9
NC_UNKNOWNS = ("xi0", "xi", "eta1", "eta2")
RESULTS = []


def _generic():
    src = parse_source(read_data("rd_generic.sys"))
    return src.system, src.operator, tuple(src.assumptions)


def _ref(name):
    return system_from_source(parse_source(read_data("reference", name)))


def _groups(pairs):
    """Reference group numbers ('1a' -> 1) that found a partner."""
    out = set()
    for _, lab in pairs:
        digits = "".join(ch for ch in lab if ch.isdigit())
        if digits:
            out.add(int(digits))
    return out


# --- criteria ------------------------------------------------------------------------


def criterion_1():
    t0 = time.perf_counter()
    S, Q, asm = _generic()
    ds = determining_system(S, Q, (1,), assumptions=asm)
    rep = compare_systems(ds, _ref("first_type.sys"))
    dt = time.perf_counter() - t0
    ok = rep.status in ("identical", "equivalent-up-to-combination") and set(range(1, 7)) <= _groups(rep.matched_pairs) and dt < 10
    return ok, f"status={rep.status} groups={sorted(_groups(rep.matched_pairs))} t={dt:.2f}s"


def criterion_2():
    t0 = time.perf_counter()
    S, Q, asm = _generic()
    ds = determining_system(S, Q, (1, 2), assumptions=asm)
    rep = compare_systems(ds, _ref("nonclassical.sys"))
    nn = normalize_xi0(ds)
    rep_n = compare_systems(nn, _ref("nonclassical_normalized.sys"), unknowns=NC_UNKNOWNS)
    dt = time.perf_counter() - t0
    good = ("identical", "equivalent-up-to-combination")
    ok = rep.status in good and _groups(rep.matched_pairs) == set(range(1, 13)) and rep_n.status in good and nn.meta["xi0_free"] and dt < 10
    return ok, f"raw={rep.status} groups={len(_groups(rep.matched_pairs))} normalized={rep_n.status} t={dt:.2f}s"


def criterion_3():
    S, Q, asm = _generic()
    plain = reduce_system(determining_system(S, Q, (1,), assumptions=asm), asm)
    amended = reduce_system(determining_system(S, Q, (1,), diff_consequences=True, assumptions=asm), asm)
    same = plain.equations == amended.equations and plain.rules == amended.rules
    return same, f"plain={len(plain)} amended={len(amended)} equal={same}"


def criterion_4():
    S, Q, asm = _generic()
    nc = restrict_example(determining_system(S, Q, (1, 2), assumptions=asm))
    ft = restrict_example(determining_system(S, Q, (1,), assumptions=asm))
    a = compare_systems(nc, _ref("example_nonclassical.sys")).status
    b = compare_systems(ft, _ref("example_first_type.sys")).status
    za = normalize_xi0(impose_zero(nc, "d2", (1,)))
    zb = normalize_xi0(impose_zero(ft, "d2", (1,)))
    c = compare_systems(za, zb, unknowns=NC_UNKNOWNS).status
    ok = len(nc) == 2 and len(ft) == 3 and a == "identical" and b == "identical" and c in ("identical", "equivalent-up-to-combination")
    return ok, f"nonclassical={len(nc)} eqs ({a}) first-type={len(ft)} eqs ({b}) with d2_v=0: {c}"


def criterion_5():
    t0 = time.perf_counter()
    worst = 0.0
    ok = True
    parts = []
    for row in (1, 2, 3, 4, 5):
        r = verify_claim(load_entry(row), "nonclassical", seed=0, n_points=100, tol=TOL, n_samples=3)
        ok &= r.passed and len(r.reports) >= 3 and all(x.n_points >= 100 for x in r.reports)
        worst = max(worst, r.max_violation)
        parts.append(f"row{row}={r.max_violation:.1e}")
        if row in (1, 3):
            rs = verify_claim(load_entry(row), "nonclassical", {"lambda": 0}, seed=0, n_points=100, tol=TOL, p_mode="sample")
            ok &= rs.passed
            parts.append(f"row{row}[p=6/x^2]={rs.max_violation:.1e}")
    dt = time.perf_counter() - t0
    ok &= dt < 30
    return ok, " ".join(parts) + f" t={dt:.2f}s"


def criterion_6():
    r1 = verify_claim(load_entry(1), "first_type", seed=0, tol=TOL)
    r3 = verify_claim(load_entry(3), "first_type", seed=0, tol=TOL)
    ok = r1.passed and not r3.passed and r3.max_violation > 1e-6
    grid = []
    for lam1 in (0, 2):
        for l in (0, 1):
            p = {"k": 1, "l": l, "lambda1": lam1, "lambda2": 1}
            lie_case = lam1 == 0 and l == 0
            r = verify_claim(load_entry(2), "first_type", p, seed=0, tol=TOL, allow_lie=lie_case)
            want = lam1 == 0 or l == 0
            ok &= r.passed == want
            grid.append(f"({lam1},{l})={'T' if r.passed else 'F'}")
    lie = verify_claim(load_entry(2), "lie", {"lambda1": 0, "l": 0}, seed=0, tol=TOL, allow_lie=True)
    ok &= lie.passed
    return ok, f"row1={r1.passed} row3 violation={r3.max_violation:.2e} row2 grid {' '.join(grid)} lie={lie.passed}"


def _autonomous_systems():
    out = []
    u, v = jet("u"), jet("v")
    for seed in range(3):
        rng = random.Random(100 + seed)
        bind1 = lambda body, a: substitute_functions(func("h", [a]), {"h": body})  # noqa: E731
        bind2 = lambda body: substitute_functions(func("h", [u, v]), {"h": body})  # noqa: E731
        d1 = 1 + random_polynomial("d1", 1, rng, degree=2).body ** 2
        d2 = 2 + random_polynomial("d2", 1, rng, degree=1).body ** 2
        C1 = random_polynomial("C1", 2, rng).body
        C2 = random_polynomial("C2", 2, rng).body
        out.append(RDCanonical(("u", "v"), (bind1(d1, u), bind1(d2, v)), (bind2(C1), bind2(C2))))
    return out


def criterion_7():
    ok = True
    cases = 0
    for sysm in _autonomous_systems():
        for direction in ("t", "x"):
            q = translation(direction, ("u", "v"))
            zero = {}
            for idx in ((), (1,), (2,), (1, 2)):
                man = build_manifold(sysm, q, idx, allow_xi0_zero=True)
                zero[idx] = all(r.is_zero for r in invariance_residuals(sysm, q, man))
            if zero[()]:
                ok &= zero[(1,)] and zero[(2,)] and zero[(1, 2)]
            ok &= all(zero.values())
            cases += 1
    return ok, f"{cases} operator/system pairs, all residuals symbolic zero={ok}"


def criterion_8():
    worst = 0.0
    rng = random.Random(8)
    for D in (power(jet("U"), Fraction(3, 2)), power(jet("U"), 2), 1 + jet("U") ** 2):
        _, rec = to_canonical(RDOriginal(("U", "V"), (D, const(1)), (func("F", [jet("U"), jet("V")]), const(0))))
        for _ in range(200):
            x = rng.uniform(0.2, 3)
            back = rec.eval_inverse(0, rec.eval_forward(0, x))
            worst = max(worst, abs(back - x) / abs(x))
    k, l, l1, l2 = param("k"), param("l"), param("lambda1"), param("lambda2")
    U, V = jet("U"), jet("V")
    F = func("F", [U, V])
    _, rec = to_canonical(RDOriginal(("U", "V"), (power(U, k), power(V, l)), (F, F)))
    q = transform_operator(VectorField(1, 0, (l1 * power(U, -k), l2 * power(V, -l)), ("U", "V")), rec)
    op_ok = q == VectorField(1, 0, (l1, l2), ("u", "v"))
    return worst < 1e-10 and op_ok, f"max relative round-trip error={worst:.1e} (600 points) row2 operator ok={op_ok}"


def criterion_9(n=500):
    counts = dict.fromkeys(("idempotence", "commutation", "collect", "parser"), 0)
    pairs = [(Jet("u"), Jet("u", 0, 1)), (Jet("u"), Jet("v")), (Jet("u", 0, 2), Jet("u"))]
    for seed in range(n):
        e = gen_expr(seed)
        if normalize(e.tree()) == e:
            counts["idempotence"] += 1
        a, b = pairs[seed % len(pairs)]
        if equal_canonical(diff_partial(diff_partial(e, a), b), diff_partial(diff_partial(e, b), a)):
            counts["commutation"] += 1
        p = gen_polynomial(seed)
        total = const(0)
        for mono, coeff in collect(p, [UX, UXX]).items():
            total = total + mono * coeff
        if total == p:
            counts["collect"] += 1
        back = parse_expr(render(e, SCOPE), SCOPE)
        if back == e or equal_canonical(back, e):
            counts["parser"] += 1
    ok = all(c == n for c in counts.values())
    return ok, " ".join(f"{k}={c}/{n}" for k, c in counts.items())


def criterion_10():
    argv = [sys.executable, "-m", "qcondsym", "verify", "--catalog", "2", "--format", "json", "--seed", "11", "--n-points", "50"]
    a = subprocess.run(argv, capture_output=True).stdout
    b = subprocess.run(argv, capture_output=True).stdout
    ok = a == b and len(a) > 0
    return ok, f"{len(a)} bytes, identical={a == b}"


CRITERIA = [
    (1, "first-type determining system", criterion_1),
    (2, "non-classical determining system and normalization", criterion_2),
    (3, "amended manifold adds nothing", criterion_3),
    (4, "example specialization", criterion_4),
    (5, "catalog non-classical verification", criterion_5),
    (6, "classification suite", criterion_6),
    (7, "hierarchy property", criterion_7),
    (8, "Kirchhoff round trip and operator", criterion_8),
    (9, "kernel corpus properties", criterion_9),
    (10, "determinism", criterion_10),
]


def _run(num, name, fn):
    t0 = time.perf_counter()
    ok, detail = fn()
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {name} ({detail}; {time.perf_counter() - t0:.2f}s)"
    RESULTS.append(line)
    print(line)
    return ok, line


@pytest.mark.parametrize("num, name, fn", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_criterion(num, name, fn):
    ok, line = _run(num, name, fn)
    assert ok, line


if __name__ == "__main__":
    results = [_run(*c)[0] for c in CRITERIA]
    sys.exit(0 if all(results) else 1)
