"""Jet-space bookkeeping: total derivatives and prolongation of point vector fields."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

from .symkernel import (
    EXPR_ZERO,
    Expr,
    Jet,
    KernelError,
    Var,
    diff_partial,
    power,
    to_expr,
)

T = Var("t")
X = Var("x")
INDEP = {"t": T, "x": X}


class JetError(KernelError):
    pass


def total_derivative(e: Expr, direction: str) -> Expr:
    """D_t or D_x: explicit derivative plus the chain rule through every jet in e."""
    e = to_expr(e)
    v = INDEP[direction]
    out = diff_partial(e, v)
    for j in sorted(e.jets(), key=lambda a: a.key):
        d = diff_partial(e, j)
        if not d.is_zero:
            out = out + d * Expr.atom(j.bump(direction))
    return out


def total_derivative_multi(e: Expr, nt: int, nx: int) -> Expr:
    for _ in range(nx):
        e = total_derivative(e, "x")
    for _ in range(nt):
        e = total_derivative(e, "t")
    return e


def jets_up_to(name: str, k: int, min_order: int = 1):
    return [Jet(name, nt, n - nt) for n in range(min_order, k + 1) for nt in range(n + 1)]


@dataclass(frozen=True)
class VectorField:
    """Q = xi0 d_t + xi1 d_x + sum_a eta[a] d_{deps[a]}."""

    xi0: Expr
    xi1: Expr
    eta: tuple
    deps: tuple

    def __post_init__(self):
        object.__setattr__(self, "xi0", to_expr(self.xi0))
        object.__setattr__(self, "xi1", to_expr(self.xi1))
        object.__setattr__(self, "eta", tuple(to_expr(e) for e in self.eta))
        object.__setattr__(self, "deps", tuple(self.deps))
        if len(self.eta) != len(self.deps):
            raise JetError("one eta coefficient per dependent variable")
        for c in self.coefficients():
            if any(j.order >= 1 for j in c.jets()):
                raise JetError("operator coefficients must not depend on derivatives")

    def coefficients(self):
        return (self.xi0, self.xi1) + self.eta

    def characteristic(self, a: int) -> Expr:
        """W_a = eta_a - xi0 u_t - xi1 u_x."""
        name = self.deps[a]
        return self.eta[a] - self.xi0 * Expr.atom(Jet(name, 1, 0)) - self.xi1 * Expr.atom(Jet(name, 0, 1))

    def invariant_surface(self, a: int) -> Expr:
        """Q(u_a) = xi0 u_t + xi1 u_x - eta_a (the negated characteristic)."""
        return -self.characteristic(a)

    def scale(self, c: Expr) -> "VectorField":
        c = to_expr(c)
        return VectorField(self.xi0 * c, self.xi1 * c, tuple(e * c for e in self.eta), self.deps)

    def map(self, fn) -> "VectorField":
        return VectorField(fn(self.xi0), fn(self.xi1), tuple(fn(e) for e in self.eta), self.deps)


def translation(direction: str, deps: Sequence[str]) -> VectorField:
    one, zero = to_expr(1), EXPR_ZERO
    xi0, xi1 = (one, zero) if direction == "t" else (zero, one)
    return VectorField(xi0, xi1, tuple(zero for _ in deps), tuple(deps))


@dataclass(frozen=True)
class ProlongedField:
    base: VectorField
    order: int
    coeffs: dict = field(hash=False, compare=False)

    def coefficient(self, j: Jet) -> Expr:
        if j.order == 0:
            return self.base.eta[self.base.deps.index(j.name)]
        if j.order > self.order:
            raise JetError("insufficient prolongation order")
        return self.coeffs[j]


@lru_cache(maxsize=256)
def prolong(q: VectorField, k: int) -> ProlongedField:
    if k < 1:
        raise JetError("prolongation order must be at least 1")
    coeffs = {}
    for a, name in enumerate(q.deps):
        dw = {(0, 0): q.characteristic(a)}
        for n in range(1, k + 1):
            for nt in range(n + 1):
                nx = n - nt
                # x-derivatives first, then t; total derivatives commute
                if nt == 0:
                    dw[(0, nx)] = total_derivative(dw[(0, nx - 1)], "x")
                else:
                    dw[(nt, nx)] = total_derivative(dw[(nt - 1, nx)], "t")
                j = Jet(name, nt, nx)
                coeffs[j] = (
                    dw[(nt, nx)]
                    + q.xi0 * Expr.atom(j.bump("t"))
                    + q.xi1 * Expr.atom(j.bump("x"))
                )
    return ProlongedField(q, k, coeffs)


def apply_prolonged(pq: ProlongedField, e: Expr) -> Expr:
    e = to_expr(e)
    q = pq.base
    out = q.xi0 * diff_partial(e, T) + q.xi1 * diff_partial(e, X)
    for j in sorted(e.jets(), key=lambda a: a.key):
        if j.name not in q.deps:
            raise JetError(f"jet {j} of a variable the operator does not act on")
        if j.order > pq.order:
            raise JetError("insufficient prolongation order")
        d = diff_partial(e, j)
        if not d.is_zero:
            out = out + pq.coefficient(j) * d
    return out


@dataclass(frozen=True)
class EvolutionSystem:
    """u^a_t = F^a(t, x, u, u_x, ..., u_{x^k})."""

    deps: tuple
    rhs: tuple
    params: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "deps", tuple(self.deps))
        object.__setattr__(self, "rhs", tuple(to_expr(f) for f in self.rhs))
        if not self.deps or len(self.deps) != len(self.rhs):
            raise JetError("one right-hand side per dependent variable")
        for f in self.rhs:
            if any(j.nt for j in f.jets()):
                raise JetError("time derivatives on the right-hand side")

    @property
    def m(self) -> int:
        return len(self.deps)

    @property
    def orders(self) -> tuple:
        out = []
        for a, f in zip(self.deps, self.rhs):
            ks = [j.nx for j in f.jets() if j.name == a]
            out.append(max(ks, default=0))
        return tuple(out)

    @property
    def max_order(self) -> int:
        return max(max(self.orders), 1)

    def equations(self) -> list:
        return [Expr.atom(Jet(a, 1, 0)) - f for a, f in zip(self.deps, self.rhs)]

    def top_solutions(self) -> dict:
        """Solve each equation for its top x-derivative; the rhs must be linear in it."""
        out = {}
        for a, f, k in zip(self.deps, self.rhs, self.orders):
            if k == 0:
                raise JetError(f"equation for {a} has no x-derivative of {a}")
            top = Jet(a, 0, k)
            c = diff_partial(f, top)
            if not diff_partial(c, top).is_zero:
                raise JetError(f"equation for {a} is not linear in {top}")
            rest = f - c * Expr.atom(top)
            out[top] = (Expr.atom(Jet(a, 1, 0)) - rest) * power(c, -1)
        return out
