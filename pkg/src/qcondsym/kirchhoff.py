"""Kirchhoff substitution u = int D(U) dU for two-component diffusion systems.

It maps U_t = (D(U) U_x)_x + F(U, V) to u_xx = d(u) u_t + C(u, v) with
d = 1/D(U(u)) and C = -F(U(u), V(v)), and transforms operator coefficients by
eta = D(U) eta*.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from scipy.optimize import brentq

from .jetspace import EvolutionSystem, JetError, VectorField
from .symkernel import (
    ConstBase,
    Expr,
    Jet,
    KernelError,
    Param,
    diff_partial,
    func,
    power,
    substitute,
    to_expr,
)


class KirchhoffError(KernelError):
    pass


def _ujet(name, nt=0, nx=0):
    return Expr.atom(Jet(name, nt, nx))


@dataclass(frozen=True)
class RDCanonical:
    """u^a_xx = d^a(u^a) u^a_t + C^a(u, v)."""

    deps: tuple
    d: tuple
    C: tuple
    params: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(to_expr(e) for e in self.d))
        object.__setattr__(self, "C", tuple(to_expr(e) for e in self.C))
        for e in self.d + self.C:
            if any(j.order for j in e.jets()):
                raise JetError("diffusivities and reactions must not contain derivatives")

    @property
    def m(self) -> int:
        return len(self.deps)

    orders = property(lambda self: (2,) * len(self.deps))
    max_order = 2

    def equations(self) -> list:
        """S_a = d^a u^a_t + C^a - u^a_xx."""
        return [d * _ujet(a, 1, 0) + C - _ujet(a, 0, 2) for a, d, C in zip(self.deps, self.d, self.C)]

    def top_solutions(self) -> dict:
        return {Jet(a, 0, 2): d * _ujet(a, 1, 0) + C for a, d, C in zip(self.deps, self.d, self.C)}

    def to_evolution(self) -> EvolutionSystem:
        rhs = [(_ujet(a, 0, 2) - C) * power(d, -1) for a, d, C in zip(self.deps, self.d, self.C)]
        return EvolutionSystem(self.deps, tuple(rhs), self.params)


@dataclass(frozen=True)
class RDOriginal:
    """U^a_t = (D^a(U^a) U^a_x)_x + F^a(U, V)."""

    deps: tuple
    D: tuple
    F: tuple
    params: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "D", tuple(to_expr(e) for e in self.D))
        object.__setattr__(self, "F", tuple(to_expr(e) for e in self.F))
        for a, D in zip(self.deps, self.D):
            if any(j.order for j in D.jets()) or any(j.name != a for j in D.jets()):
                raise JetError(f"diffusivity of {a} must depend on {a} only")

    @property
    def m(self) -> int:
        return len(self.deps)

    orders = property(lambda self: (2,) * len(self.deps))
    max_order = 2

    def to_evolution(self) -> EvolutionSystem:
        rhs = []
        for a, D, F in zip(self.deps, self.D, self.F):
            dD = diff_partial(D, Jet(a))
            rhs.append(D * _ujet(a, 0, 2) + dD * _ujet(a, 0, 1) ** 2 + F)
        return EvolutionSystem(self.deps, tuple(rhs), self.params)

    def equations(self) -> list:
        return self.to_evolution().equations()

    def top_solutions(self) -> dict:
        return self.to_evolution().top_solutions()


# --------------------------------------------------------------------------
# antiderivatives and inverses


def antiderivative(D: Expr, name: str) -> Expr:
    """int_0 D(U) dU for D a sum of c * U^a terms, a != -1 (a may involve parameters)."""
    D = to_expr(D)
    U = Jet(name)
    out = Expr.const(0)
    for m, c in D.sorted_terms():
        a = Fraction(0)
        coef = Expr.const(c)
        for b, x in m:
            if b == U:
                a = x
            elif isinstance(b, (Param, ConstBase)) or (type(b) is Expr and all(type(p) is Param for p in b.atoms)):
                coef = coef * Expr({((b, x),): Fraction(1)})
            else:
                raise KirchhoffError("non-integrable diffusivity form: only sums of power terms are supported")
        a1 = to_expr(a) + 1
        if a1.is_zero:
            raise KirchhoffError(f"unsupported case D = {name}^(-1): the antiderivative is logarithmic")
        out = out + coef * power(a1, -1) * power(Expr.atom(U), a1)
    return out


def closed_inverse(fwd: Expr, name: str, new: str):
    """Solve u = c * U^b for U; None when fwd is not a single power term."""
    U = Jet(name)
    if len(fwd.terms) != 1:
        return None
    (m, c), = fwd.terms.items()
    b = None
    coef = Expr.const(c)
    for base, x in m:
        if base == U:
            b = x
        else:
            coef = coef * Expr({((base, x),): Fraction(1)})
    if b is None:
        return None
    u = _ujet(new)
    return power(u * power(coef, -1), power(to_expr(b), -1))


@dataclass
class TransformRecord:
    orig: tuple  # ('U', 'V')
    new: tuple  # ('u', 'v')
    D: tuple
    forward: tuple  # u(U), v(V)
    inverse: tuple  # U(u), V(v): Expr, or None for numeric inversion
    params: dict = field(default_factory=dict)

    def inverse_atom(self, a: int) -> Expr:
        """Closed-form inverse, or an opaque function standing for the numeric one."""
        inv = self.inverse[a]
        if inv is not None:
            return inv
        return func(self.orig[a] + "inv", [_ujet(self.new[a])])

    def eval_forward(self, a: int, value: float, params: dict | None = None) -> float:
        from .numoracle import evaluate

        return evaluate(self.forward[a], {Jet(self.orig[a]): value}, params or self.params)

    def eval_inverse(self, a: int, value: float, params: dict | None = None) -> float:
        from .numoracle import evaluate

        params = params or self.params
        inv = self.inverse[a]
        if inv is not None:
            return evaluate(inv, {Jet(self.new[a]): value}, params)
        # u(U) is strictly increasing on U > 0 because D > 0 there
        g = lambda U: self.eval_forward(a, U, params) - value
        lo, hi = 0.5, 2.0
        for _ in range(200):
            if g(lo) <= 0:
                break
            lo /= 2
        for _ in range(200):
            if g(hi) >= 0:
                break
            hi *= 2
        return brentq(g, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)


def to_canonical(orig: RDOriginal, new: tuple = ("u", "v"), numeric_fallback: bool = True):
    """Canonical system and the variable maps of the Kirchhoff substitution."""
    fwd = tuple(antiderivative(D, a) for D, a in zip(orig.D, orig.deps))
    inv = tuple(closed_inverse(f, a, b) for f, a, b in zip(fwd, orig.deps, new))
    if not numeric_fallback and any(i is None for i in inv):
        raise KirchhoffError("antiderivative is not invertible in closed form and numeric fallback is disabled")
    rec = TransformRecord(tuple(orig.deps), tuple(new), orig.D, fwd, inv)
    back = {Jet(a): rec.inverse_atom(i) for i, a in enumerate(orig.deps)}
    d = tuple(substitute(power(D, -1), back) for D in orig.D)
    C = tuple(-substitute(F, back) for F in orig.F)
    return RDCanonical(tuple(new), d, C, orig.params), rec


def transform_operator(q_star: VectorField, rec: TransformRecord, numeric_fallback: bool = True) -> VectorField:
    if tuple(q_star.deps) != rec.orig:
        raise KirchhoffError("operator and transform act on different variables")
    if not numeric_fallback and any(i is None for i in rec.inverse):
        raise KirchhoffError("inverse map unavailable in closed form and numeric fallback is disabled")
    back = {Jet(a): rec.inverse_atom(i) for i, a in enumerate(rec.orig)}
    eta = tuple(substitute(D * e, back) for D, e in zip(rec.D, q_star.eta))
    return VectorField(substitute(q_star.xi0, back), substitute(q_star.xi1, back), eta, rec.new)
