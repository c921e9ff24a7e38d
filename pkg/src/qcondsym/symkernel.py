"""Exact symbolic kernel.

An :class:`Expr` is a Laurent polynomial with rational coefficients over a set
of *bases*:

* atoms -- parameters, independent variables, jet coordinates, opaque function
  applications and substitution slots;
* positive rational constants, only ever under a non-integer power;
* multi-term expressions, only ever under a power that is not a positive
  integer (positive integer powers are expanded).

Exponents are rationals or expressions in parameters only.  Every Expr is in
canonical form as soon as it is built, so structural equality is equality of
canonical forms.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import gcd
from typing import Callable, Iterable, Mapping, Union

ONE = Fraction(1)
ZERO = Fraction(0)

Number = Union[int, Fraction]


class KernelError(Exception):
    pass


class ZeroDenominatorError(KernelError, ZeroDivisionError):
    def __init__(self, msg="zero denominator"):
        super().__init__(msg)


class NonPolynomialError(KernelError):
    def __init__(self, msg="non-polynomial in basis"):
        super().__init__(msg)


# --------------------------------------------------------------------------
# atoms


class Atom:
    __slots__ = ("_hash", "key", "atoms")

    def __eq__(self, other):
        return self is other or (
            type(self) is type(other) and self._hash == other._hash and self.key == other.key
        )

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return self._hash

    def __lt__(self, other):
        return self.key < other.key

    def __repr__(self):
        return f"{type(self).__name__}({self})"


class Param(Atom):
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name
        self.key = (1, name)
        self._hash = hash(self.key)
        self.atoms = frozenset((self,))

    def __str__(self):
        return self.name


class Var(Atom):
    """Independent variable (t or x)."""

    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name
        self.key = (2, name)
        self._hash = hash(self.key)
        self.atoms = frozenset((self,))

    def __str__(self):
        return self.name


class Jet(Atom):
    """Jet coordinate: derivative of dependent variable ``name`` of order (nt, nx)."""

    __slots__ = ("name", "nt", "nx")

    def __init__(self, name: str, nt: int = 0, nx: int = 0):
        if nt < 0 or nx < 0:
            raise KernelError("negative jet multi-index")
        self.name = name
        self.nt = nt
        self.nx = nx
        self.key = (3, name, nt, nx)
        self._hash = hash(self.key)
        self.atoms = frozenset((self,))

    @property
    def order(self) -> int:
        return self.nt + self.nx

    def bump(self, direction: str) -> "Jet":
        if direction == "t":
            return Jet(self.name, self.nt + 1, self.nx)
        if direction == "x":
            return Jet(self.name, self.nt, self.nx + 1)
        raise KernelError(f"unknown direction {direction!r}")

    def __str__(self):
        if self.order == 0:
            return self.name
        return self.name + "_" + "t" * self.nt + "x" * self.nx


class Slot(Atom):
    """Placeholder for the j-th argument of a function body."""

    __slots__ = ("index",)

    def __init__(self, index: int):
        self.index = index
        self.key = (6, index)
        self._hash = hash(self.key)
        self.atoms = frozenset((self,))

    def __str__(self):
        return f"#{self.index}"


class Func(Atom):
    """Opaque function application with a derivative multi-index over argument slots."""

    __slots__ = ("name", "args", "deriv")

    def __init__(self, name: str, args: tuple, deriv: tuple):
        if len(args) != len(deriv):
            raise KernelError("derivative multi-index length differs from arity")
        if any(d < 0 for d in deriv):
            raise KernelError("negative derivative multi-index")
        self.name = name
        self.args = args
        self.deriv = deriv
        self.key = (4, name, deriv, tuple(a.key for a in args))
        self._hash = hash(self.key)
        acc = {self}
        for a in args:
            acc.update(a.atoms)
        self.atoms = frozenset(acc)

    @property
    def order(self) -> int:
        return sum(self.deriv)

    def with_deriv(self, deriv) -> "Func":
        return Func(self.name, self.args, tuple(deriv))

    def __str__(self):
        d = "".join(f"_{i}" * n for i, n in enumerate(self.deriv) if n)
        return f"{self.name}{d}({', '.join(map(str, self.args))})"


class ConstBase(Atom):
    """Positive rational constant kept as a base under a non-integer power."""

    __slots__ = ("value",)

    def __init__(self, value: Fraction):
        self.value = value
        self.key = (0, value)
        self._hash = hash(self.key)
        self.atoms = frozenset()

    def __str__(self):
        return str(self.value)


BUILTIN_FUNCS = {"exp"}


# --------------------------------------------------------------------------
# expressions


def _exp_key(e):
    return (0, e) if type(e) is Fraction else (1, e.key)


def _mono_key(m):
    return tuple((b.key, _exp_key(e)) for b, e in m)


class Expr:
    """Canonical expression: mapping monomial -> nonzero rational coefficient.

    A monomial is a tuple of ``(base, exponent)`` pairs sorted by base key.
    """

    __slots__ = ("terms", "_hash", "_key", "_atoms", "_sorted")

    def __init__(self, terms: dict):
        self.terms = terms
        self._hash = None
        self._key = None
        self._atoms = None
        self._sorted = None

    # ---- constructors -------------------------------------------------
    @staticmethod
    def const(c: Number) -> "Expr":
        c = Fraction(c)
        return Expr({(): c}) if c else Expr({})

    @staticmethod
    def atom(a: Atom) -> "Expr":
        return Expr({((a, ONE),): ONE})

    # ---- identity -----------------------------------------------------
    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self.terms.items()))
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if isinstance(other, (int, Fraction)):
            other = Expr.const(other)
        if not isinstance(other, Expr):
            return NotImplemented
        if self._hash is not None and other._hash is not None and self._hash != other._hash:
            return False
        return self.terms == other.terms

    def __ne__(self, other):
        r = self.__eq__(other)
        return r if r is NotImplemented else not r

    def sorted_terms(self) -> tuple:
        if self._sorted is None:
            self._sorted = tuple(sorted(self.terms.items(), key=lambda it: _mono_key(it[0])))
        return self._sorted

    @property
    def key(self) -> tuple:
        if self._key is None:
            self._key = (5, tuple((_mono_key(m), c) for m, c in self.sorted_terms()))
        return self._key

    def __lt__(self, other):
        return self.key < other.key

    @property
    def atoms(self) -> frozenset:
        """Every atom occurring anywhere, including inside function arguments and exponents."""
        if self._atoms is None:
            acc = set()
            for m in self.terms:
                for b, e in m:
                    acc.update(b.atoms)
                    if type(e) is not Fraction:
                        acc.update(e.atoms)
            self._atoms = frozenset(acc)
        return self._atoms

    # ---- queries ------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def is_const(self) -> bool:
        return not self.terms or (len(self.terms) == 1 and () in self.terms)

    def const_value(self) -> Fraction:
        if not self.is_const:
            raise KernelError("expression is not constant")
        return self.terms.get((), ZERO)

    def is_atom(self) -> bool:
        if len(self.terms) != 1:
            return False
        (m, c), = self.terms.items()
        return c == 1 and len(m) == 1 and m[0][1] == 1 and not isinstance(m[0][0], (Expr, ConstBase))

    def as_atom(self) -> Atom:
        if not self.is_atom():
            raise KernelError(f"not an atom: {self}")
        return next(iter(self.terms))[0][0]

    def jets(self) -> frozenset:
        return frozenset(a for a in self.atoms if type(a) is Jet)

    def funcs(self) -> frozenset:
        return frozenset(a for a in self.atoms if type(a) is Func)

    def leading_coeff(self) -> Fraction:
        """Coefficient of the canonically first term."""
        return self.sorted_terms()[0][1] if self.terms else ZERO

    def __len__(self):
        return len(self.terms)

    def __bool__(self):
        return bool(self.terms)

    # ---- arithmetic ---------------------------------------------------
    def __add__(self, other):
        other = _to_expr(other)
        if not other.terms:
            return self
        if not self.terms:
            return other
        out = dict(self.terms)
        for m, c in other.terms.items():
            s = out.get(m, ZERO) + c
            if s:
                out[m] = s
            else:
                out.pop(m, None)
        return Expr(out)

    __radd__ = __add__

    def __neg__(self):
        return Expr({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-_to_expr(other))

    def __rsub__(self, other):
        return _to_expr(other) + (-self)

    def __mul__(self, other):
        return _mul(self, _to_expr(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _mul(self, power(_to_expr(other), -1))

    def __rtruediv__(self, other):
        return _mul(_to_expr(other), power(self, -1))

    def __pow__(self, e):
        return power(self, e)

    def scale(self, c: Number) -> "Expr":
        c = Fraction(c)
        if not c:
            return Expr({})
        return Expr({m: v * c for m, v in self.terms.items()})

    # ---- views --------------------------------------------------------
    def tree(self):
        return _tree(self)

    def __str__(self):
        from .pdeparse import render

        return render(self)

    def __repr__(self):
        return f"Expr({self})"


ExprLike = Union[Expr, Atom, int, Fraction]

EXPR_ZERO = Expr({})
EXPR_ONE = Expr({(): ONE})


def _to_expr(x) -> Expr:
    if type(x) is Expr:
        return x
    if isinstance(x, (int, Fraction)):
        return Expr.const(x)
    if isinstance(x, Atom) and not isinstance(x, ConstBase):
        return Expr.atom(x)
    if isinstance(x, Node):
        return normalize(x)
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


def to_expr(x: ExprLike) -> Expr:
    return _to_expr(x)


def _to_atom(a) -> Atom:
    if isinstance(a, Atom):
        return a
    if isinstance(a, Expr):
        return a.as_atom()
    raise TypeError(f"not an atom: {a!r}")


# ---- exponent arithmetic ------------------------------------------------


def _coerce_exp(e):
    if type(e) is Fraction:
        return e
    if isinstance(e, int):
        return Fraction(e)
    e = _to_expr(e)
    if e.is_const:
        return e.const_value()
    bad = [a for a in e.atoms if type(a) is not Param]
    if bad:
        raise KernelError("exponent must be a rational constant or a parameter expression")
    e = cancel(e)
    return e.const_value() if e.is_const else e


def _exp_add(a, b):
    if type(a) is Fraction and type(b) is Fraction:
        return a + b
    return _coerce_exp(_to_expr(a) + _to_expr(b))


def _exp_mul(a, b):
    if type(a) is Fraction and type(b) is Fraction:
        return a * b
    return _coerce_exp(_to_expr(a) * _to_expr(b))


def _is_pos_int(e) -> bool:
    return type(e) is Fraction and e.denominator == 1 and e > 0


# ---- monomials ----------------------------------------------------------


def _finish(d: dict):
    """Turn a base->exponent dict into (coefficient, monomial, expansion factor or None)."""
    coeff = ONE
    extra = None
    items = []
    for b, e in d.items():
        if type(e) is Fraction:
            if not e:
                continue
            if type(b) is Expr and e.denominator == 1 and e > 0:
                p = _pow_int(b, int(e))
                extra = p if extra is None else _mul(extra, p)
                continue
            if type(b) is ConstBase:
                ip = e.numerator // e.denominator
                if ip:
                    coeff *= b.value ** ip
                    e = e - ip
                if not e:
                    continue
        items.append((b, e))
    items.sort(key=lambda it: it[0].key)
    return coeff, tuple(items), extra


def _mono_mul(m1, m2):
    d = dict(m1)
    for b, e in m2:
        if b in d:
            d[b] = _exp_add(d[b], e)
        else:
            d[b] = e
    return _finish(d)


def _mul(a: Expr, b: Expr) -> Expr:
    if not a.terms or not b.terms:
        return EXPR_ZERO
    out = {}
    tail = None
    for m1, c1 in a.terms.items():
        for m2, c2 in b.terms.items():
            if not m1 and not m2:
                m, k, extra = m1, ONE, None
            else:
                # always finish: callers may pass held S**n factors that must expand
                k, m, extra = _mono_mul(m1, m2)
            c = c1 * c2 * k
            if extra is None:
                s = out.get(m, ZERO) + c
                if s:
                    out[m] = s
                else:
                    out.pop(m, None)
            else:
                t = _mul(Expr({m: c}), extra)
                tail = t if tail is None else tail + t
    r = Expr(out)
    return r if tail is None else r + tail


def _from_mono_dict(d: dict, c: Fraction) -> Expr:
    k, m, extra = _finish(d)
    r = Expr({m: c * k}) if c * k else EXPR_ZERO
    return r if extra is None else _mul(r, extra)


# ---- powers -------------------------------------------------------------


def _iroot(n: int, q: int):
    """Exact integer q-th root of n >= 0, or None."""
    if n < 2:
        return n
    lo, hi = 0, 1 << ((n.bit_length() + q - 1) // q + 1)
    while lo < hi:
        mid = (lo + hi) // 2
        if mid**q < n:
            lo = mid + 1
        else:
            hi = mid
    return lo if lo**q == n else None


def _rational_power(c: Fraction, e):
    """c**e as (rational factor, list of extra (base, exp) pairs)."""
    if c == 1:
        return ONE, []
    if type(e) is Fraction and e.denominator == 1:
        return c ** int(e), []
    if c < 0:
        if type(e) is Fraction and e.denominator % 2 == 1:
            sign = -1 if e.numerator % 2 else 1
            f, extra = _rational_power(-c, e)
            return sign * f, extra
        raise KernelError("non-real power of a negative constant")
    if type(e) is Fraction:
        q = e.denominator
        rn, rd = _iroot(c.numerator, q), _iroot(c.denominator, q)
        if rn is not None and rd is not None:
            return Fraction(rn, rd) ** e.numerator, []
        # one atom per prime keeps 8^(1/2) and 2*2^(1/2) the same canonical form
        extra = {}
        for n, sign in ((c.numerator, 1), (c.denominator, -1)):
            for pr, mult in _factor(n):
                extra[pr] = extra.get(pr, ZERO) + sign * mult * e
        return ONE, [(ConstBase(Fraction(pr)), x) for pr, x in sorted(extra.items()) if x]
    return ONE, [(ConstBase(c), e)]


def _factor(n: int, bound: int = 1 << 16):
    """Trial division; a cofactor left above the bound is returned as one factor."""
    out = []
    p = 2
    while p * p <= n and p <= bound:
        m = 0
        while n % p == 0:
            n //= p
            m += 1
        if m:
            out.append((p, m))
        p += 1 if p == 2 else 2
    if n > 1:
        out.append((n, 1))
    return out


def _pow_int(b: Expr, n: int) -> Expr:
    result = EXPR_ONE
    base = b
    while n:
        if n & 1:
            result = _mul(result, base)
        n >>= 1
        if n:
            base = _mul(base, base)
    return result


def _content(b: Expr):
    """Split b = c * m * rest with c > 0 rational, m monomial, rest primitive."""
    items = list(b.terms.items())
    common = dict(items[0][0])
    for m, _ in items[1:]:
        md = dict(m)
        for base in list(common):
            if base not in md:
                del common[base]
                continue
            e1, e2 = common[base], md[base]
            if type(e1) is Fraction and type(e2) is Fraction:
                common[base] = min(e1, e2)
            elif e1 != e2:
                del common[base]
    num = 0
    den = 1
    for _, c in items:
        num = gcd(num, c.numerator)
        den = den * c.denominator // gcd(den, c.denominator)
    c = Fraction(num, den)
    inv = {base: (-e if type(e) is Fraction else _coerce_exp(-e)) for base, e in common.items()}
    rest = EXPR_ZERO
    if inv:
        rest = _mul(b, Expr({tuple(sorted(inv.items(), key=lambda it: it[0].key)): ONE}))
    else:
        rest = b
    rest = rest.scale(1 / c)
    return c, tuple(sorted(common.items(), key=lambda it: it[0].key)), rest


def _pow_monomial(m, c: Fraction, e) -> Expr:
    f, extra = _rational_power(c, e)
    d = {}
    for b, x in m:
        d[b] = _exp_mul(x, e)
    for b, x in extra:
        d[b] = _exp_add(d[b], x) if b in d else x
    return _from_mono_dict(d, f)


def power(b: ExprLike, e) -> Expr:
    b = _to_expr(b)
    e = _coerce_exp(e)
    if type(e) is Fraction:
        if not e:
            return EXPR_ONE
        if e == 1:
            return b
        if not b.terms:
            if e > 0:
                return EXPR_ZERO
            raise ZeroDenominatorError()
        if e.denominator == 1 and e > 0 and len(b.terms) > 1:
            return _pow_int(b, int(e))
    else:
        if not b.terms:
            raise KernelError("zero base with parameter exponent")
        if b == EXPR_ONE:
            return EXPR_ONE
    if len(b.terms) == 1:
        (m, c), = b.terms.items()
        return _pow_monomial(m, c, e)
    c, m, rest = _content(b)
    out = _pow_monomial(m, c, e)
    if len(rest.terms) == 1:
        (m2, c2), = rest.terms.items()
        return _mul(out, _pow_monomial(m2, c2, e))
    return _mul(out, Expr({((rest, e),): ONE}))


# --------------------------------------------------------------------------
# public constructors


def const(c: Number) -> Expr:
    return Expr.const(c)


def param(name: str) -> Expr:
    return Expr.atom(Param(name))


def var(name: str) -> Expr:
    return Expr.atom(Var(name))


def jet(name: str, nt: int = 0, nx: int = 0) -> Expr:
    return Expr.atom(Jet(name, nt, nx))


def slot(i: int) -> Expr:
    return Expr.atom(Slot(i))


def func(name: str, args: Iterable[ExprLike], deriv: Iterable[int] | None = None) -> Expr:
    args = tuple(_to_expr(a) for a in args)
    deriv = tuple(deriv) if deriv is not None else (0,) * len(args)
    if name == "exp":
        if len(args) != 1:
            raise KernelError("exp takes one argument")
        if args[0].is_zero:
            return EXPR_ONE
        return Expr.atom(Func("exp", args, (0,)))
    return Expr.atom(Func(name, args, deriv))


def exp(arg: ExprLike) -> Expr:
    return func("exp", [arg])


# --------------------------------------------------------------------------
# raw trees


class Node:
    """Unnormalized expression tree node."""


@dataclass(frozen=True)
class Num(Node):
    value: Fraction


@dataclass(frozen=True)
class Add(Node):
    children: tuple


@dataclass(frozen=True)
class Mul(Node):
    children: tuple


@dataclass(frozen=True)
class Pow(Node):
    base: object
    exp: object


@dataclass(frozen=True)
class Call(Node):
    name: str
    args: tuple
    deriv: tuple = ()


def normalize(e) -> Expr:
    """Canonical form of a raw tree, an atom, a number or an Expr."""
    if type(e) is Expr:
        return e
    if isinstance(e, Num):
        return Expr.const(e.value)
    if isinstance(e, Add):
        out = EXPR_ZERO
        for c in e.children:
            out = out + normalize(c)
        return out
    if isinstance(e, Mul):
        out = EXPR_ONE
        for c in e.children:
            out = _mul(out, normalize(c))
        return out
    if isinstance(e, Pow):
        return power(normalize(e.base), normalize(e.exp))
    if isinstance(e, Call):
        args = tuple(normalize(a) for a in e.args)
        return func(e.name, args, e.deriv or None)
    if isinstance(e, Func):
        return func(e.name, e.args, e.deriv)
    if isinstance(e, ConstBase):
        return Expr.const(e.value)
    if isinstance(e, Atom):
        return Expr.atom(e)
    if isinstance(e, (int, Fraction)):
        return Expr.const(e)
    raise TypeError(f"cannot normalize {type(e).__name__}")


def _base_tree(b):
    if type(b) is Expr:
        return b.tree()
    if type(b) is ConstBase:
        return Num(b.value)
    return b


def _exp_tree(e):
    return Num(e) if type(e) is Fraction else e.tree()


def _tree(e: Expr):
    if not e.terms:
        return Num(ZERO)
    terms = []
    for m, c in e.sorted_terms():
        factors = [] if c == 1 and m else [Num(c)]
        for b, x in m:
            factors.append(_base_tree(b) if x == 1 else Pow(_base_tree(b), _exp_tree(x)))
        terms.append(factors[0] if len(factors) == 1 else Mul(tuple(factors)))
    return terms[0] if len(terms) == 1 else Add(tuple(terms))


# --------------------------------------------------------------------------
# calculus


def _diff_base(b, a: Atom) -> Expr:
    if type(b) is Expr:
        return _diff(b, a)
    if type(b) is Func:
        if b.name == "exp":
            return _mul(Expr.atom(b), _diff(b.args[0], a))
        out = EXPR_ZERO
        for j, arg in enumerate(b.args):
            if a not in arg.atoms:
                continue
            d = _diff(arg, a)
            if d.is_zero:
                continue
            nd = list(b.deriv)
            nd[j] += 1
            out = out + _mul(Expr.atom(Func(b.name, b.args, tuple(nd))), d)
        return out
    return EXPR_ONE if b == a else EXPR_ZERO


@lru_cache(maxsize=200_000)
def _diff(e: Expr, a: Atom) -> Expr:
    if a not in e.atoms:
        return EXPR_ZERO
    out = {}
    tail = EXPR_ZERO
    for m, c in e.terms.items():
        for i, (b, x) in enumerate(m):
            if type(x) is not Fraction and a in x.atoms:
                raise KernelError("derivative with respect to a parameter in an exponent needs log")
            if a not in b.atoms:
                continue
            db = _diff_base(b, a)
            if db.is_zero:
                continue
            d = dict(m)
            d[b] = _exp_add(x, -ONE)
            if type(x) is Fraction:
                t = _mul(_from_mono_dict(d, c * x), db)
            else:
                t = _mul(_mul(_from_mono_dict(d, c), x), db)
            if len(t.terms) == 1 and not tail.terms:
                (mm, cc), = t.terms.items()
                s = out.get(mm, ZERO) + cc
                if s:
                    out[mm] = s
                else:
                    out.pop(mm, None)
            else:
                tail = tail + t
    return Expr(out) + tail


def diff_partial(e: ExprLike, a) -> Expr:
    """Partial derivative of e with respect to the atom a; other atoms are independent."""
    a = _to_atom(a)
    if isinstance(a, (Func, ConstBase)):
        raise KernelError("can only differentiate with respect to a variable, jet or parameter")
    return _diff(_to_expr(e), a)


def map_funcs(e: Expr, fn: Callable[[Func], Expr | None], _memo=None) -> Expr:
    """Rebuild e, replacing every function application f by fn(f) when that is not None.

    Arguments are rewritten first, so fn sees applications with rewritten arguments.
    """
    if not any(type(a) is Func for a in e.atoms):
        return e
    memo = {} if _memo is None else _memo

    def base(b):
        if b in memo:
            return memo[b]
        if type(b) is Func:
            args = tuple(map_funcs(arg, fn, memo) for arg in b.args)
            nb = Func(b.name, args, b.deriv) if args != b.args else b
            r = fn(nb)
            r = Expr.atom(nb) if r is None else r
        elif type(b) is Expr:
            r = map_funcs(b, fn, memo)
        else:
            r = Expr.atom(b) if not isinstance(b, ConstBase) else None
        memo[b] = r
        return r

    out = EXPR_ZERO
    for m, c in e.terms.items():
        t = Expr.const(c)
        for b, x in m:
            if type(b) is ConstBase:
                t = _mul(t, Expr({((b, x),): ONE}))
            else:
                t = _mul(t, power(base(b), x))
        out = out + t
    return out


def substitute(e: ExprLike, m: Mapping) -> Expr:
    """Simultaneous replacement of atoms (keys) by expressions (values)."""
    e = _to_expr(e)
    if not m:
        return e
    mp = {}
    for k, v in m.items():
        k = _to_atom(k)
        if k in mp:
            raise KernelError(f"duplicate substitution key {k}")
        mp[k] = _to_expr(v)
    return _subst(e, mp, {})


def _subst(e: Expr, mp: dict, memo: dict) -> Expr:
    if e.atoms.isdisjoint(mp):
        return e

    def base(b):
        if b in memo:
            return memo[b]
        if b in mp:
            r = mp[b]
        elif type(b) is Func:
            if b.atoms.isdisjoint(mp):
                r = Expr.atom(b)
            else:
                r = func(b.name, [_subst(a, mp, memo) for a in b.args], b.deriv)
        elif type(b) is Expr:
            r = _subst(b, mp, memo)
        else:
            r = Expr.atom(b)
        memo[b] = r
        return r

    out = EXPR_ZERO
    for mono, c in e.terms.items():
        t = Expr.const(c)
        for b, x in mono:
            if type(b) is ConstBase:
                bx = Expr({((b, x),): ONE}) if type(x) is Fraction else power(Expr.const(b.value), _subst(x, mp, memo))
                t = _mul(t, bx)
                continue
            if type(x) is not Fraction and not x.atoms.isdisjoint(mp):
                x = _subst(x, mp, memo)
            t = _mul(t, power(base(b), x))
        out = out + t
    return out


def diff_slots(body: Expr, deriv) -> Expr:
    out = body
    for j, n in enumerate(deriv):
        for _ in range(n):
            out = _diff(out, Slot(j))
    return out


def substitute_functions(e: ExprLike, defs: Mapping[str, Expr]) -> Expr:
    """Replace opaque functions by bodies written in :func:`slot` atoms.

    Derivative applications become the exact derivatives of the body.
    """
    e = _to_expr(e)
    cache = {}

    def fn(f: Func):
        body = defs.get(f.name)
        if body is None:
            return None
        k = (f.name, f.deriv)
        if k not in cache:
            cache[k] = diff_slots(body, f.deriv)
        return substitute(cache[k], {Slot(j): a for j, a in enumerate(f.args)})

    return map_funcs(e, fn)


# --------------------------------------------------------------------------
# coefficient collection and division


def collect(e: ExprLike, basis: Iterable) -> dict:
    """Split e into {basis monomial: coefficient}; coefficients are free of basis atoms."""
    e = _to_expr(e)
    bset = frozenset(_to_atom(a) for a in basis)
    groups: dict = {}
    for m, c in e.terms.items():
        inside = []
        rest = []
        for b, x in m:
            if b in bset:
                if not _is_pos_int(x):
                    raise NonPolynomialError()
                inside.append((b, x))
            else:
                if not b.atoms.isdisjoint(bset):
                    raise NonPolynomialError()
                rest.append((b, x))
        key = tuple(inside)
        groups.setdefault(key, {})
        g = groups[key]
        rm = tuple(rest)
        s = g.get(rm, ZERO) + c
        if s:
            g[rm] = s
        else:
            g.pop(rm, None)
    out = {}
    for key in sorted(groups, key=_mono_key):
        if groups[key]:
            out[Expr({key: ONE})] = Expr(groups[key])
    return out


def monomial_exponents(mono: Expr, basis: Iterable) -> tuple:
    """Exponent tuple of a basis monomial returned by :func:`collect`."""
    (m, _), = mono.terms.items() if mono.terms else (((), ONE),)
    d = dict(m)
    return tuple(int(d.get(_to_atom(a), 0)) for a in basis)


def clear_denominators(e: ExprLike):
    """Return (numerator, denominator) with the denominator a monomial of negative integer powers."""
    e = _to_expr(e)
    low: dict = {}
    for m in e.terms:
        for b, x in m:
            if type(x) is Fraction and x < 0 and x.denominator == 1:
                low[b] = max(low.get(b, ZERO), -x)
    if not low:
        return e, EXPR_ONE
    den = Expr({tuple(sorted(low.items(), key=lambda it: it[0].key)): ONE})
    return _mul(e, den), den


def monomial_content(e: Expr) -> Expr:
    """Largest monomial with nonnegative integer exponents dividing every term."""
    if not e.terms:
        return EXPR_ONE
    items = iter(e.terms)
    common = {b: x for b, x in next(items) if _is_pos_int(x)}
    for m in items:
        md = dict(m)
        for b in list(common):
            x = md.get(b)
            if x is None or not _is_pos_int(x):
                del common[b]
            else:
                common[b] = min(common[b], x)
    if not common:
        return EXPR_ONE
    return Expr({tuple(sorted(common.items(), key=lambda it: it[0].key)): ONE})


def _poly_in(e: Expr, z: Atom):
    """Coefficients of e as a Laurent polynomial in z, or None if z occurs nonpolynomially."""
    out: dict = {}
    for m, c in e.terms.items():
        deg = 0
        rest = []
        for b, x in m:
            if b == z:
                if type(x) is not Fraction or x.denominator != 1:
                    return None
                deg = int(x)
            else:
                if z in b.atoms or (type(x) is not Fraction and z in x.atoms):
                    return None
                rest.append((b, x))
        out.setdefault(deg, {})[tuple(rest)] = c
    return {d: Expr(t) for d, t in out.items()}


def exact_divide(p: ExprLike, s: ExprLike):
    """Exact quotient p/s as a Laurent polynomial, or None when s does not divide p."""
    p, s = _to_expr(p), _to_expr(s)
    if s.is_zero:
        raise ZeroDenominatorError()
    if p.is_zero:
        return EXPR_ZERO
    if len(s.terms) == 1:
        return _mul(p, power(s, -1))
    cands = []
    for m in s.terms:
        for b, x in m:
            if _is_pos_int(x) and not isinstance(b, ConstBase):
                cands.append(b)
    for z in sorted(set(cands), key=lambda a: a.key, reverse=True):
        sp = _poly_in(s, z)
        if sp is None or len(sp) < 2:
            continue
        return _divide_in(p, s, z, sp)
    return None


def _divide_in(p: Expr, s: Expr, z: Atom, sp: dict):
    # shift both to polynomials in z with nonzero constant terms, then long-divide
    lo = min(sp)
    pp = _poly_in(p, z)
    if pp is None:
        return None
    plo = min(pp)
    s = _mul(s, _zpow(z, -lo))
    p = _mul(p, _zpow(z, -plo))
    ds = max(sp) - lo
    lead = sp[max(sp)]
    q = EXPR_ZERO
    while not p.is_zero:
        pp = _poly_in(p, z)
        dp = max(pp)
        if dp < ds or min(pp) < 0:
            return None
        c = exact_divide(pp[dp], lead)
        if c is None:
            return None
        t = _mul(c, _zpow(z, dp - ds))
        q = q + t
        p = p - _mul(t, s)
    return _mul(q, _zpow(z, plo - lo))


def _zpow(z: Atom, n: int) -> Expr:
    return Expr({((z, Fraction(n)),): ONE}) if n else EXPR_ONE


def cancel(e: ExprLike) -> Expr:
    """Divide out multi-term denominators that divide the numerator exactly."""
    e = _to_expr(e)
    dens: dict = {}
    for m in e.terms:
        for b, x in m:
            if type(b) is Expr and type(x) is Fraction and x.denominator == 1 and x < 0:
                dens[b] = max(dens.get(b, 0), int(-x))
    if not dens:
        return e
    num = e
    for b, n in dens.items():
        num = _mul(num, Expr({((b, Fraction(n)),): ONE}))
    out_den = EXPR_ONE
    for b, n in sorted(dens.items(), key=lambda it: it[0].key):
        k = 0
        while k < n:
            q = exact_divide(num, b)
            if q is None:
                break
            num = q
            k += 1
        if n - k:
            out_den = _mul(out_den, Expr({((b, Fraction(k - n)),): ONE}))
    return _mul(num, out_den)


def together(e: ExprLike):
    """Return (numerator, denominator) with every negative integer power cleared, sum-bases included."""
    num, den = clear_denominators(cancel(_to_expr(e)))
    return num, den


def equal_canonical(a: ExprLike, b: ExprLike) -> bool:
    d = _to_expr(a) - _to_expr(b)
    if d.is_zero:
        return True
    num, _ = together(d)
    return num.is_zero
