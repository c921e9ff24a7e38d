"""The five classified reaction-diffusion systems with their conditional symmetry operators.

Each row is a data file in the source grammar (data/catalog/rowN.sys).  This
module loads them, instantiates parameters and sample functions, predicts the
classification and checks the predictions numerically.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

from . import read_data
from .condsym import build_manifold, invariance_residuals
from .jetspace import VectorField, X
from .kirchhoff import RDOriginal, to_canonical, transform_operator
from .numoracle import (
    DEFAULT_DOMAIN,
    FunctionSample,
    Report,
    evaluate,
    random_polynomial,
    residual_check,
)
from .pdeparse import SourceSpec, parse_source, render
from .symkernel import (
    Expr,
    Func,
    Jet,
    KernelError,
    Param,
    cancel,
    diff_partial,
    func,
    map_funcs,
    slot,
    substitute,
    substitute_functions,
    to_expr,
)

ROWS = (1, 2, 3, 4, 5)


class CatalogError(KernelError):
    pass


class RestrictionError(CatalogError):
    pass


_SUB = str.maketrans("0123456789", "₀₁₂₃₄₅₆₇₈₉")
_SUP = {"^2": "²", "^3": "³"}


def pretty(text: str) -> str:
    """'lambda2 != 0' -> 'λ₂≠0' for messages."""
    import re

    s = re.sub(r"lambda(\d*)", lambda m: "λ" + m.group(1).translate(_SUB), text)
    for a, b in _SUP.items():
        s = s.replace(a, b)
    return s.replace(" != ", "≠").replace(" = ", "=")


def parse_assignments(text: str) -> dict:
    """'k=1, lambda=1/2' -> {'k': Fraction(1), 'lambda': Fraction(1, 2)}."""
    out = {}
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            continue
        if "=" not in piece:
            raise CatalogError(f"expected name=value, got {piece!r}")
        k, v = piece.split("=", 1)
        try:
            out[k.strip()] = Fraction(v.strip())
        except ValueError:
            raise CatalogError(f"parameter values must be rational numbers: {piece!r}") from None
    return out


@dataclass(eq=False)
class CatalogEntry:
    row: int
    source: str
    spec: SourceSpec

    @property
    def system(self) -> RDOriginal:
        return self.spec.system

    @property
    def operator(self) -> VectorField:
        return self.spec.operator

    @property
    def omega(self) -> Expr:
        return self.spec.scope.lets["omega"]

    @property
    def params(self) -> tuple:
        return tuple(self.spec.scope.params)

    @property
    def free_params(self) -> tuple:
        return tuple(p for p in self.params if p not in self.spec.param_defs)

    @property
    def restrictions(self) -> list:
        return list(self.spec.restrictions)

    @property
    def guards(self) -> list:
        return list(self.spec.guards)

    @property
    def side_constraints(self) -> list:
        """p_xx - p^2 - lambda p as expressions equal to zero."""
        return [Expr.atom(k) - v for k, v in self.spec.rewrites.items()]

    @property
    def defaults(self) -> dict:
        return parse_assignments(self.spec.meta.get("defaults", ""))

    @property
    def grid(self) -> list:
        g = self.spec.meta.get("grid", "")
        return [parse_assignments(p) for p in g.split(";") if p.strip()]

    def show(self) -> str:
        """The row file as shipped, plus the expanded omega."""
        head = f"# row {self.row}; omega = {render(self.omega, self.spec.scope)}"
        return head + "\n" + self.source


@lru_cache(maxsize=None)
def load_entry(row: int) -> CatalogEntry:
    if row not in ROWS:
        raise CatalogError(f"no catalog row {row}; rows are 1..5")
    text = read_data("catalog", f"row{row}.sys")
    spec = parse_source(text)
    e = CatalogEntry(row, text, spec)
    if int(spec.meta.get("row", row)) != row:
        raise CatalogError(f"row file {row} declares a different row")
    _check_omega(e)
    return e


def _check_omega(e: CatalogEntry):
    # f and g must be applied to omega itself, in both equations
    for F in e.system.F:
        for f in F.funcs():
            if f.name in ("f", "g") and f.args != (e.omega,):
                raise CatalogError(f"row {e.row}: {f.name} is not applied to omega")


def list_entries() -> list:
    return [load_entry(r) for r in ROWS]


# --------------------------------------------------------------------------
# instantiation


@dataclass
class Instance:
    entry: CatalogEntry
    system: RDOriginal
    operator: VectorField
    values: dict  # every parameter, derived ones included
    rewrites: dict = field(default_factory=dict)  # still-opaque p derivatives

    def __iter__(self):
        return iter((self.system, self.operator))


def _bind(e: Expr, values: dict) -> Expr:
    return substitute(e, {Param(k): Expr.const(v) for k, v in values.items() if Param(k) in e.atoms})


def resolve_params(entry: CatalogEntry, params=None) -> dict:
    given = {k: Fraction(v) for k, v in (params or {}).items()}
    for k in given:
        if k not in entry.params:
            raise CatalogError(f"row {entry.row} has no parameter {k!r}")
        if k in entry.spec.param_defs:
            raise CatalogError(f"{k} is determined by the other parameters in row {entry.row}")
    values = dict(entry.defaults)
    values.update(given)
    missing = [p for p in entry.free_params if p not in values]
    if missing:
        raise CatalogError(f"missing parameters: {', '.join(missing)}")
    # restrictions on the free parameters come first: they keep derived ones defined
    _check_restrictions(entry, values, allow_lie=True)
    for k, d in entry.spec.param_defs.items():
        try:
            v = cancel(_bind(d, values))
        except ZeroDivisionError:
            raise RestrictionError(f"{k} is undefined for these parameters") from None
        except KernelError as exc:
            raise RestrictionError(f"{k} is undefined for these parameters ({exc})") from None
        if not v.is_const:
            raise CatalogError(f"{k} does not reduce to a number")
        values[k] = v.const_value()
    return values


def _check_restrictions(entry: CatalogEntry, values: dict, allow_lie: bool):
    checks = entry.restrictions + ([] if allow_lie else entry.guards)
    for r in checks:
        # conditions on p are checked against the sample, or left to the rewrite rule
        if any(_bind(e, values).atoms for e, _ in r.alternatives):
            continue
        if not r.holds(lambda e: float(_eval_const(_bind(e, values)))):
            raise RestrictionError(f"restriction {pretty(r.text)} violated")


def _eval_const(e: Expr) -> Fraction:
    e = cancel(e)
    if not e.is_const:
        raise CatalogError("restriction does not reduce to a number")
    return e.const_value()


def _as_body(sample, name: str) -> Expr:
    if sample is None:
        return None
    if isinstance(sample, FunctionSample):
        return sample.body
    return to_expr(sample)


def _check_p_sample(entry: CatalogEntry, values: dict, body: Expr, tol: float = 1e-9):
    defs = {"p": body}
    for c in entry.side_constraints:
        r = cancel(substitute_functions(_bind(c, values), defs))
        if r.is_zero:
            continue
        for xv in (1.0, 1.25, 1.5, 1.75, 2.0):
            scale = 1.0 + abs(evaluate(substitute_functions(func("p", [Expr.atom(X)]), defs), {X: xv}))
            if abs(evaluate(r, {X: xv})) > tol * scale:
                raise RestrictionError("p sample does not satisfy the side constraint")
    pv = substitute_functions(func("p", [Expr.atom(X)]), defs)
    if any(abs(evaluate(pv, {X: xv})) < 1e-12 for xv in (1.0, 1.5, 2.0)):
        raise RestrictionError("restriction p≠0 violated")


def instantiate(entry: CatalogEntry, params=None, f_sample=None, g_sample=None, p_sample=None, allow_lie=False) -> Instance:
    """Concrete system and operator for one parameter choice.

    Samples are expressions in slot(0) (or FunctionSample); unsampled functions
    stay opaque.  Unpacks as (system, operator).
    """
    values = resolve_params(entry, params)
    _check_restrictions(entry, values, allow_lie)
    defs = {}
    for name, s in (("f", f_sample), ("g", g_sample)):
        b = _as_body(s, name)
        if b is not None:
            defs[name] = b
    rewrites = {k: _bind(v, values) for k, v in entry.spec.rewrites.items()}
    pb = _as_body(p_sample, "p")
    if pb is not None:
        if "p" not in entry.spec.scope.functions:
            raise CatalogError(f"row {entry.row} has no function p")
        _check_p_sample(entry, values, pb)
        defs["p"] = pb
        rewrites = {}

    def conc(e):
        e = _bind(e, values)
        return substitute_functions(e, defs) if defs else e

    s = entry.system
    sys = RDOriginal(s.deps, tuple(conc(d) for d in s.D), tuple(conc(f) for f in s.F), ())
    q = entry.operator.map(conc)
    return Instance(entry, sys, q, values, rewrites)


def apply_rewrites(e: Expr, rewrites: dict, max_passes: int = 8) -> Expr:
    """Replace p derivatives of order >= the rule's order, differentiating the rule as needed."""
    if not rewrites:
        return e
    rules = {(k.name, k.args): (sum(k.deriv), v) for k, v in rewrites.items()}

    def fn(f: Func):
        r = rules.get((f.name, f.args))
        if r is None or len(f.args) != 1:
            return None
        n, rhs = r
        k = sum(f.deriv)
        if k < n:
            return None
        arg = f.args[0]
        if not arg.is_atom():
            raise CatalogError("rewrite rules need a plain variable argument")
        out = rhs
        for _ in range(k - n):
            out = diff_partial(out, arg.as_atom())
        return out

    for _ in range(max_passes):
        new = map_funcs(e, fn)
        if new == e:
            return e
        e = new
    raise CatalogError("rewrite rules do not terminate")


# --------------------------------------------------------------------------
# classification


@dataclass
class Classification:
    nonclassical: bool
    first_type: bool
    lie_degenerate: bool
    via: tuple = ()  # indices of the invariant surface conditions that suffice
    trace: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "nonclassical": self.nonclassical,
            "first_type": self.first_type,
            "lie_degenerate": self.lie_degenerate,
            "via": list(self.via),
            "trace": list(self.trace),
        }


def _stated_first_type(row: int, v: dict):
    if row == 1:
        return True
    if row == 3:
        return False
    if row == 2:
        return v["lambda1"] == 0 or v["l"] == 0
    return None


def expected_classification(entry: CatalogEntry, params=None) -> Classification:
    """Nonclassical always; first type from eta^b * d^b_(v_b) = 0 in canonical variables.

    Adjoining only Q(u_a) leaves the other component's condition to hold by
    itself, which under xi1 = 0, eta^1_v = eta^2_u = 0 reduces to
    eta^b * d^b' = 0 for the other index b.
    """
    inst = instantiate(entry, params, allow_lie=True)
    v = inst.values
    canon, rec = to_canonical(inst.system)
    q = transform_operator(inst.operator, rec)
    u, w = (Jet(n) for n in canon.deps)
    trace = [f"params: {', '.join(f'{k}={x}' for k, x in sorted(v.items()))}"]
    trace.append(f"canonical d1 = {render(canon.d[0])}, d2 = {render(canon.d[1])}")
    trace.append(f"canonical operator: xi0 = {render(q.xi0)}, xi1 = {render(q.xi1)}, "
                 f"eta1 = {render(q.eta[0])}, eta2 = {render(q.eta[1])}")
    shape = q.xi1.is_zero and diff_partial(q.eta[0], w).is_zero and diff_partial(q.eta[1], u).is_zero
    trace.append(f"xi1 = 0, eta1_v = 0, eta2_u = 0: {shape}")
    if not shape:
        raise CatalogError(f"row {entry.row}: operator outside the classified shape")
    via = []
    for a, (eta_other, d_other, j_other) in ((1, (q.eta[1], canon.d[1], w)), (2, (q.eta[0], canon.d[0], u))):
        c = cancel(eta_other * diff_partial(d_other, j_other))
        b = 3 - a
        ok = c.is_zero
        trace.append(f"Q(u{a}) only: eta{b}*d{b}' = {render(c)} -> {'first type' if ok else 'not first type'}")
        if ok:
            via.append(a)
    first = bool(via)
    stated = _stated_first_type(entry.row, v)
    if stated is not None and stated != first:
        trace.append(f"stated rule gives first_type={stated}; the computed criterion is used")
    lie = entry.row == 2 and v["lambda1"] == 0 and v["l"] == 0
    if entry.row == 2:
        trace.append(f"lambda1 = l = 0 (Lie operator): {lie}")
    return Classification(True, first, lie, tuple(via), trace)


# --------------------------------------------------------------------------
# numeric verification

KINDS = ("nonclassical", "first_type", "lie")


@dataclass
class ClaimResult:
    claim_id: str
    kind: str
    passed: bool
    confirmed_fail: bool
    reports: list  # Report per (indices, sample)
    expected: bool | None = None
    branches: list = field(default_factory=list)  # (indices, max violation) per branch

    @property
    def agrees(self) -> bool:
        return self.expected is None or self.expected == self.passed

    @property
    def max_violation(self) -> float:
        """Worst point of the best branch: a claim holds if one branch holds."""
        if self.branches:
            return min(v for _, v in self.branches)
        return max(r.max_violation for r in self.reports)

    def as_dict(self) -> dict:
        return {
            "claim-id": self.claim_id,
            "kind": self.kind,
            "status": "pass" if self.passed else ("confirmed-fail" if self.confirmed_fail else "fail"),
            "expected": self.expected,
            "reports": [r.as_dict() for r in self.reports],
        }


@lru_cache(maxsize=64)
def _residuals(row: int, values_key: tuple, indices: tuple, p_mode: str):
    entry = load_entry(row)
    values = {k: v for k, v in values_key if k not in entry.spec.param_defs}
    p_sample = slot(0) ** -2 * 6 if p_mode == "sample" else None
    inst = instantiate(entry, values, p_sample=p_sample, allow_lie=True)
    evo = inst.system.to_evolution()
    man = build_manifold(evo, inst.operator, indices)
    res = invariance_residuals(evo, inst.operator, man)
    return tuple(apply_rewrites(r, inst.rewrites) for r in res)


def _indices_for(kind: str) -> list:
    if kind == "nonclassical":
        return [(1, 2)]
    if kind == "first_type":
        return [(1,), (2,)]
    if kind == "lie":
        return [()]
    raise CatalogError(f"unknown claim kind {kind!r}")


def verify_claim(
    entry: CatalogEntry,
    kind: str,
    params=None,
    seed: int = 0,
    n_points: int = 100,
    tol: float = 1e-9,
    n_samples: int = 3,
    p_mode: str = "rewrite",
    expected: bool | None = None,
    allow_lie: bool = False,
) -> ClaimResult:
    """Residual check of one claim with n_samples independent (f, g) polynomial samples.

    first_type passes if either single invariant surface condition suffices.
    p_mode 'sample' uses p = 6/x^2 and requires lambda = 0.
    """
    values = resolve_params(entry, params)
    _check_restrictions(entry, values, allow_lie)
    if p_mode == "sample":
        if "p" not in entry.spec.scope.functions:
            p_mode = "rewrite"
        elif values.get("lambda") != 0:
            raise RestrictionError("p = 6/x^2 solves the side constraint only for λ=0")
    rng = random.Random(seed)
    samples = [(random_polynomial("f", 1, rng), random_polynomial("g", 1, rng)) for _ in range(n_samples)]
    key = tuple(sorted(values.items()))
    reports = []
    branches = []
    branch_pass = []
    branch_fail = []
    for idx in _indices_for(kind):
        res = _residuals(entry.row, key, idx, p_mode)
        rs = []
        for i, (f, g) in enumerate(samples):
            cid = f"row{entry.row}/{kind}/Q{''.join(map(str, idx)) or '-'}/s{i}"
            rs.append(residual_check(res, n_points, tol, DEFAULT_DOMAIN, seed + 7919 * (i + 1), None, [f, g], cid))
        reports += rs
        branches.append((idx, max(r.max_violation for r in rs)))
        branch_pass.append(all(r.passed for r in rs))
        branch_fail.append(any(r.confirmed_fail for r in rs))
    passed = any(branch_pass)
    confirmed = not passed and all(branch_fail)
    return ClaimResult(f"row{entry.row}/{kind}", kind, passed, confirmed, reports, expected, branches)


def verify_entry(entry: CatalogEntry, params=None, seed: int = 0, n_points: int = 100, tol: float = 1e-9,
                 n_samples: int = 3, p_mode: str = "rewrite", kinds=("nonclassical", "first_type")) -> list:
    """Every claim of a row, each compared with expected_classification."""
    exp = expected_classification(entry, params)
    want = {"nonclassical": exp.nonclassical, "first_type": exp.first_type, "lie": exp.lie_degenerate}
    allow_lie = exp.lie_degenerate
    return [
        verify_claim(entry, k, params, seed, n_points, tol, n_samples, p_mode, want[k], allow_lie)
        for k in kinds
    ]


__all__ = [
    "CatalogEntry",
    "CatalogError",
    "ClaimResult",
    "Classification",
    "Instance",
    "Report",
    "RestrictionError",
    "apply_rewrites",
    "expected_classification",
    "instantiate",
    "list_entries",
    "load_entry",
    "verify_claim",
    "verify_entry",
]
