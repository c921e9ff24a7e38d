"""Seeded random expression trees for property tests and the kernel corpus."""

import math
import random
from fractions import Fraction

from qcondsym.pdeparse import Scope
from qcondsym.symkernel import (
    Add,
    Call,
    Jet,
    Mul,
    Num,
    Param,
    Pow,
    Var,
    func,
    jet,
    normalize,
    param,
)

U, UX, UXX, V, VX = Jet("u"), Jet("u", 0, 1), Jet("u", 0, 2), Jet("v"), Jet("v", 0, 1)
T, X, K = Var("t"), Var("x"), Param("k")
LEAVES = (U, UX, UXX, V, VX, T, X, K)
POSITIVE = (U, V)  # sampled in [0.5, 2], safe under fractional powers

SCOPE = Scope(params=["k"], deps=["u", "v"], functions={"f": ("u",), "g": ("u", "v")})


def _num(rng):
    return Num(Fraction(rng.randint(-6, 6), rng.choice((1, 1, 2, 3))))


def gen_tree(rng: random.Random, depth: int = 3):
    if depth <= 0 or rng.random() < 0.25:
        return rng.choice(LEAVES) if rng.random() < 0.75 else _num(rng)
    r = rng.random()
    if r < 0.3:
        return Add(tuple(gen_tree(rng, depth - 1) for _ in range(rng.randint(2, 3))))
    if r < 0.55:
        return Mul(tuple(gen_tree(rng, depth - 1) for _ in range(rng.randint(2, 3))))
    if r < 0.7:
        return Pow(gen_tree(rng, depth - 1), Num(Fraction(rng.randint(0, 3))))
    if r < 0.8:
        b = rng.choice(POSITIVE)
        e = Num(Fraction(rng.choice((-3, -1, 1, 3)), 2)) if rng.random() < 0.7 else Mul((Num(Fraction(1, 2)), K))
        return Pow(b, e)
    if r < 0.9:
        return Call("f", (gen_tree(rng, depth - 1),))
    if r < 0.97:
        return Call("g", (gen_tree(rng, depth - 1), gen_tree(rng, depth - 1)))
    return Call("exp", (Mul((Num(Fraction(1, 4)), rng.choice(POSITIVE))),))


def gen_expr(seed: int, depth: int = 3):
    return normalize(gen_tree(random.Random(seed), depth))


def gen_polynomial(seed: int, basis=(UX, UXX)):
    """Sum of coefficient * basis monomial with coefficients free of the basis."""
    rng = random.Random(seed)
    coeff_leaves = [a for a in LEAVES if a not in basis]
    out = normalize(Num(Fraction(0)))
    for _ in range(rng.randint(1, 4)):
        c = normalize(Mul((_num(rng), rng.choice(coeff_leaves))))
        if rng.random() < 0.4:
            c = c * func("f", [jet("u")])
        m = normalize(Num(Fraction(1)))
        for b in basis:
            m = m * normalize(b) ** rng.randint(0, 2)
        out = out + c * m
    return out


# --------------------------------------------------------------------------
# plain-float evaluation of raw trees: an oracle independent of the kernel


SAMPLE_F = lambda a: a**3 / 4 - a + 1  # noqa: E731
SAMPLE_G = lambda a, b: a * b - b**2 / 2 + a / 3  # noqa: E731


def eval_tree(t, env: dict) -> float:
    if isinstance(t, Num):
        return float(t.value)
    if isinstance(t, Add):
        return math.fsum(eval_tree(c, env) for c in t.children)
    if isinstance(t, Mul):
        out = 1.0
        for c in t.children:
            out *= eval_tree(c, env)
        return out
    if isinstance(t, Pow):
        return eval_tree(t.base, env) ** eval_tree(t.exp, env)
    if isinstance(t, Call):
        args = [eval_tree(a, env) for a in t.args]
        if t.name == "exp":
            return math.exp(args[0])
        return SAMPLE_F(*args) if t.name == "f" else SAMPLE_G(*args)
    return env[t]


def random_env(rng: random.Random) -> dict:
    env = {a: rng.uniform(-2, 2) for a in LEAVES}
    for a in POSITIVE:
        env[a] = rng.uniform(0.5, 2)
    env[K] = rng.uniform(0.5, 2)
    return env


def samples():
    """FunctionSample bodies matching SAMPLE_F and SAMPLE_G, for numoracle."""
    from qcondsym.numoracle import FunctionSample
    from qcondsym.symkernel import slot

    a, b = slot(0), slot(1)
    return [
        FunctionSample("f", a**3 * Fraction(1, 4) - a + 1, 1),
        FunctionSample("g", a * b - b**2 * Fraction(1, 2) + a * Fraction(1, 3), 2),
    ]


def kernel_env(env: dict) -> tuple:
    """(values, params) in the shape numoracle.evaluate expects."""
    values = {a: v for a, v in env.items() if a != K}
    return values, {"k": env[K]}


__all__ = ["gen_tree", "gen_expr", "gen_polynomial", "eval_tree", "random_env", "samples", "kernel_env", "SCOPE", "param"]
