"""Random-point numeric verification of symbolic identities and residuals."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement

from .symkernel import (
    ConstBase,
    Expr,
    Func,
    Jet,
    KernelError,
    Param,
    Slot,
    Var,
    diff_slots,
    slot,
)


class EvalError(KernelError):
    pass


class DomainViolation(EvalError):
    def __init__(self, msg="domain violation"):
        super().__init__(msg)


# --------------------------------------------------------------------------
# function samples


@dataclass(frozen=True)
class FunctionSample:
    """Concrete body for an opaque function, written in slot atoms."""

    name: str
    body: Expr
    arity: int = 1

    def derivative(self, deriv: tuple) -> Expr:
        return _sample_derivative(self.body, tuple(deriv))


@lru_cache(maxsize=4096)
def _sample_derivative(body: Expr, deriv: tuple) -> Expr:
    return diff_slots(body, deriv)


def random_polynomial(name: str, arity: int, rng: random.Random, degree: int = 3) -> FunctionSample:
    """Degree-<=3 polynomial with nonzero rational coefficients in [-2, 2]."""
    body = Expr.const(0)
    for deg in range(degree + 1):
        for combo in combinations_with_replacement(range(arity), deg):
            c = Fraction(rng.choice([i for i in range(-8, 9) if i]), 4)
            term = Expr.const(c)
            for j in combo:
                term = term * slot(j)
            body = body + term
    return FunctionSample(name, body, arity)


# --------------------------------------------------------------------------
# evaluation


def _param_values(params) -> dict:
    out = {}
    for k, v in (params or {}).items():
        name = k.name if isinstance(k, Param) else (k.as_atom().name if isinstance(k, Expr) else k)
        out[name] = float(v)
    return out


class _Evaluator:
    def __init__(self, values: dict, params: dict, samples: dict):
        self.values = values
        self.params = params
        self.samples = samples
        self.memo = {}

    def base(self, b) -> float:
        if b in self.memo:
            return self.memo[b]
        if type(b) is Expr:
            r = self.expr(b)
        elif type(b) is ConstBase:
            r = float(b.value)
        elif type(b) is Param:
            if b.name not in self.params:
                raise EvalError(f"uncovered atom {b}")
            r = self.params[b.name]
        elif b in self.values:
            r = self.values[b]
        elif type(b) is Func:
            r = self.func(b)
        else:
            raise EvalError(f"uncovered atom {b}")
        self.memo[b] = r
        return r

    def func(self, f: Func) -> float:
        if f.name == "exp":
            return math.exp(self.expr(f.args[0]))
        s = self.samples.get(f.name)
        if s is None:
            raise EvalError(f"uncovered atom {f}")
        body = s.derivative(f.deriv)
        inner = _Evaluator({Slot(j): self.expr(a) for j, a in enumerate(f.args)}, self.params, {})
        return inner.expr(body)

    def power(self, b, x) -> float:
        v = self.base(b)
        if type(x) is Fraction:
            if x.denominator == 1:
                if v == 0 and x < 0:
                    raise DomainViolation("domain violation: zero to a negative power")
                return v ** int(x)
            if v < 0:
                raise DomainViolation()
            if v == 0 and x < 0:
                raise DomainViolation("domain violation: zero to a negative power")
            return v ** float(x)
        e = self.expr(x)
        if v < 0:
            if float(e).is_integer():
                return v ** int(e)
            raise DomainViolation()
        if v == 0 and e <= 0:
            raise DomainViolation("domain violation: zero to a non-positive power")
        return v**e

    def terms(self, e: Expr) -> list:
        out = []
        for m, c in e.sorted_terms():
            t = float(c)
            for b, x in m:
                t *= self.power(b, x)
            out.append(t)
        return out

    def expr(self, e: Expr) -> float:
        return math.fsum(self.terms(e))


def _as_samples(samples) -> dict:
    if samples is None:
        return {}
    if isinstance(samples, dict):
        return dict(samples)
    return {s.name: s for s in samples}


def evaluate(e: Expr, values: dict, params=None, samples=None) -> float:
    """Numeric value of e; values maps atoms (jets, t, x, free function atoms) to floats."""
    try:
        return _Evaluator(values, _param_values(params), _as_samples(samples)).expr(e)
    except OverflowError:
        raise DomainViolation("domain violation: overflow") from None
    except ZeroDivisionError:
        raise DomainViolation("domain violation: division by zero") from None


def evaluate_terms(e: Expr, values: dict, params=None, samples=None) -> list:
    try:
        return _Evaluator(values, _param_values(params), _as_samples(samples)).terms(e)
    except (OverflowError, ZeroDivisionError):
        raise DomainViolation() from None


# --------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class Domain:
    dep: tuple = (0.5, 2.0)
    t: tuple = (0.1, 1.0)
    x: tuple = (1.0, 2.0)
    jet: tuple = (-2.0, 2.0)
    gap: float = 0.1
    # per-atom overrides as (name, lo, hi) triples; names as rendered by str(atom)
    ranges: tuple = ()

    def range_for(self, a) -> tuple:
        s = str(a)
        for name, lo, hi in self.ranges:
            if name == s:
                return lo, hi
        if type(a) is Var:
            return self.t if a.name == "t" else self.x
        if type(a) is Jet and a.order == 0:
            return self.dep
        return self.jet


DEFAULT_DOMAIN = Domain()


@dataclass
class NumericPoint:
    values: dict
    params: dict
    seed: int

    def describe(self) -> dict:
        out = {str(k): v for k, v in self.values.items()}
        out.update({k: float(v) for k, v in self.params.items()})
        return dict(sorted(out.items()))


def free_atoms(exprs, samples=None) -> list:
    """Atoms needing a sampled value: t, x, jets and opaque functions without a sample."""
    samples = _as_samples(samples)
    acc = set()
    for e in exprs:
        for a in e.atoms:
            if type(a) in (Var, Jet):
                acc.add(a)
            elif type(a) is Func and a.name != "exp" and a.name not in samples:
                acc.add(a)
    # a Func atom whose arguments are themselves sampled still gets one value per distinct atom
    return sorted(acc, key=lambda a: a.key)


def denominator_atoms(exprs) -> set:
    out = set()

    def walk(e):
        for m in e.terms:
            for b, x in m:
                if type(b) is Expr:
                    walk(b)
                elif type(b) is Func:
                    for a in b.args:
                        walk(a)
                if type(x) is Fraction and x < 0 and type(b) in (Jet, Func, Var):
                    out.add(b)

    for e in exprs:
        walk(e)
    return out


def sample_point(atoms, rng: random.Random, domain: Domain, gapped: set, params: dict, seed: int) -> NumericPoint:
    vals = {}
    for a in atoms:
        lo, hi = domain.range_for(a)
        while True:
            v = rng.uniform(lo, hi)
            if a not in gapped or abs(v) >= domain.gap:
                break
        vals[a] = v
    return NumericPoint(vals, dict(params), seed)


@dataclass
class Report:
    claim_id: str
    n_points: int
    tol: float
    max_violation: float
    status: str
    seed: int
    failing_point: dict | None = None
    retries: int = 0

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    @property
    def confirmed_fail(self) -> bool:
        """A must-fail claim counts only if the violation clears 10^3 * tol."""
        return self.max_violation > 1e3 * self.tol

    def as_dict(self) -> dict:
        return {
            "claim-id": self.claim_id,
            "n_points": self.n_points,
            "tol": self.tol,
            "max_violation": self.max_violation,
            "status": self.status,
            "seed": self.seed,
            "failing_point": self.failing_point,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)


def violation(e: Expr, pt: NumericPoint, samples=None) -> float:
    """|value| / (1 + max |term|): the relative-cancellation metric."""
    terms = evaluate_terms(e, pt.values, pt.params, samples)
    if not terms:
        return 0.0
    value = math.fsum(terms)
    scale = max(abs(t) for t in terms)
    if not math.isfinite(value) or not math.isfinite(scale):
        raise DomainViolation("domain violation: non-finite value")
    return abs(value) / (1.0 + scale)


def residual_check(
    exprs,
    n_points: int = 100,
    tol: float = 1e-9,
    domain: Domain = DEFAULT_DOMAIN,
    seed: int = 0,
    params=None,
    samples=None,
    claim_id: str = "residual",
    max_retries: int = 1000,
    point_hook=None,
) -> Report:
    """Evaluate every expression at n_points random points; pass iff all violations <= tol.

    point_hook, if given, may rewrite each sampled point (e.g. to make dependent
    values consistent) and may raise DomainViolation to request a resample.
    """
    if n_points < 1 or tol <= 0:
        raise ValueError("n_points >= 1 and tol > 0 required")
    exprs = [e for e in exprs]
    samples = _as_samples(samples)
    params = {k: v for k, v in _param_values(params).items()}
    atoms = free_atoms(exprs, samples)
    gapped = denominator_atoms(exprs)
    rng = random.Random(seed)
    worst = 0.0
    worst_pt = None
    retries = 0
    for _ in range(n_points):
        while True:
            pt = sample_point(atoms, rng, domain, gapped, params, seed)
            try:
                if point_hook is not None:
                    pt = point_hook(pt)
                vs = [violation(e, pt, samples) for e in exprs]
                break
            except DomainViolation:
                retries += 1
                if retries > max_retries:
                    raise EvalError("too many domain violations while sampling") from None
        v = max(vs, default=0.0)
        if v > worst or worst_pt is None:
            worst, worst_pt = v, pt
    status = "pass" if worst <= tol else "fail"
    return Report(
        claim_id,
        n_points,
        tol,
        worst,
        status,
        seed,
        None if status == "pass" else worst_pt.describe(),
        retries,
    )


def check_identity(a: Expr, b: Expr, n_points: int = 50, tol: float = 1e-9, seed: int = 0, **kw) -> bool:
    return residual_check([a - b], n_points, tol, seed=seed, **kw).passed
