"""Determining equations for Lie, first-type, p-th-type and non-classical symmetries.

The manifold adjoins the system and a chosen subset of invariant surface
conditions Q(u_i) = 0; residuals of the prolonged operator are restricted to it
and split by monomials in the remaining free jets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .jetspace import T, X, VectorField, apply_prolonged, prolong, total_derivative
from .symkernel import (
    EXPR_ONE,
    Expr,
    Func,
    Jet,
    KernelError,
    clear_denominators,
    collect,
    exact_divide,
    func,
    map_funcs,
    monomial_content,
    power,
    slot,
    substitute,
    substitute_functions,
    to_expr,
)


class CondsymError(KernelError):
    pass


GENERIC_ARGS = ("t", "x", "u", "v")
UNKNOWNS = ("xi0", "xi1", "eta1", "eta2")


def generic_operator(deps=("u", "v"), names=None) -> VectorField:
    """Operator with opaque coefficients xi0, xi1, eta1.. of (t, x, deps)."""
    args = [Expr.atom(T), Expr.atom(X)] + [Expr.atom(Jet(a)) for a in deps]
    names = names or ["xi0", "xi1"] + [f"eta{i}" for i in range(1, len(deps) + 1)]
    f = [func(n, args) for n in names]
    return VectorField(f[0], f[1], tuple(f[2:]), tuple(deps))


def generic_rd_system(deps=("u", "v")):
    from .kirchhoff import RDCanonical

    u, v = (Expr.atom(Jet(a)) for a in deps)
    d = (func("d1", [u]), func("d2", [v]))
    C = (func("C1", [u, v]), func("C2", [u, v]))
    return RDCanonical(tuple(deps), d, C)


# --------------------------------------------------------------------------
# manifolds and residuals


@dataclass(frozen=True)
class Manifold:
    constraints: tuple
    plan: tuple  # ((Jet, Expr), ...) applied in order
    diff_consequences: bool = False
    indices: tuple = ()

    @property
    def eliminated(self) -> tuple:
        return tuple(j for j, _ in self.plan)


def _solve_linear(e: Expr, j: Jet) -> Expr:
    from .symkernel import diff_partial

    c = diff_partial(e, j)
    if c.is_zero or not diff_partial(c, j).is_zero:
        raise CondsymError(f"constraint is not solvable for {j}")
    return -(e - c * Expr.atom(j)) * power(c, -1)


def build_manifold(sys, q: VectorField, indices, diff_consequences: bool = False, allow_xi0_zero: bool = False) -> Manifold:
    """Manifold {S_a = 0} plus Q(u_i) = 0 for i in indices (1-based).

    indices = () gives the Lie manifold.  With allow_xi0_zero and xi0 = 0, each
    Q(u_i) is solved for u_i,x instead of u_i,t.
    """
    indices = tuple(sorted(set(indices)))
    m = len(sys.deps)
    if any(i < 1 or i > m for i in indices):
        raise CondsymError("indices out of range")
    if tuple(q.deps) != tuple(sys.deps):
        raise CondsymError("operator and system use different dependent variables")
    xi0_zero = q.xi0.is_zero
    if indices and xi0_zero and not allow_xi0_zero:
        raise CondsymError("xi0-zero branch unsupported")
    if indices and xi0_zero and q.xi1.is_zero:
        raise CondsymError("operator has xi0 = xi1 = 0")
    constraints = list(sys.equations())
    plan = []
    qs = {i: q.invariant_surface(i - 1) for i in indices}
    constraints += [qs[i] for i in indices]
    if diff_consequences:
        for i in indices:
            a = sys.deps[i - 1]
            lead = "t" if not xi0_zero else "x"
            for d in ("x", "t"):
                dq = total_derivative(qs[i], d)
                constraints.append(dq)
                j = Jet(a, 1, 0).bump(d) if lead == "t" else Jet(a, 0, 1).bump(d)
                plan.append((j, _solve_linear(dq, j)))
    plan += list(sys.top_solutions().items())
    for i in indices:
        a = sys.deps[i - 1]
        j = Jet(a, 1, 0) if not xi0_zero else Jet(a, 0, 1)
        plan.append((j, _solve_linear(qs[i], j)))
    seen = [j for j, _ in plan]
    if len(set(seen)) != len(seen):
        raise CondsymError("elimination plan solves a jet twice")
    return Manifold(tuple(constraints), tuple(plan), diff_consequences, indices)


def apply_plan(e: Expr, man: Manifold, max_passes: int = 8) -> Expr:
    elim = set(man.eliminated)
    for _ in range(max_passes):
        for j, sol in man.plan:
            if j in e.atoms:
                e = substitute(e, {j: sol})
        if elim.isdisjoint(e.atoms):
            return e
    raise CondsymError("elimination plan does not terminate")


def invariance_residuals(sys, q: VectorField, man: Manifold, with_denominators: bool = False):
    """Prolonged operator applied to each S_a, restricted to the manifold, denominators cleared."""
    pq = prolong(q, sys.max_order)
    out = []
    for S in sys.equations():
        r = apply_plan(apply_prolonged(pq, S), man)
        num, den = clear_denominators(r)
        out.append((num, den))
    return out if with_denominators else [n for n, _ in out]


# --------------------------------------------------------------------------
# determining systems


@dataclass
class DeterminingSystem:
    equations: tuple
    labels: tuple
    basis: tuple = ()
    assumptions: tuple = ()
    denominators: tuple = ()
    rules: tuple = ()  # (name, deriv) zero-derivative rules, for reduced systems
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.equations)

    def items(self):
        return zip(self.labels, self.equations)


def monic(e: Expr) -> Expr:
    """Scale so that the canonically first coefficient is +1."""
    c = e.leading_coeff()
    return e if c == 1 or not c else e.scale(1 / c)


def _dedupe(pairs):
    out = {}
    for lab, e in pairs:
        if e.is_zero:
            continue
        e = monic(e)
        if e in out:
            out[e].append(lab)
        else:
            out[e] = [lab]
    return out


def split_determining(residuals, free_jets=None, assumptions=(), denominators=()) -> DeterminingSystem:
    """Coefficients of each residual as a polynomial in the free jets, deduplicated."""
    residuals = [to_expr(r) for r in residuals]
    if free_jets is None:
        acc = set()
        for r in residuals:
            acc.update(j for j in r.jets() if j.order >= 1)
        free_jets = sorted(acc, key=lambda j: j.key)
    basis = tuple(free_jets)
    pairs = []
    for i, r in enumerate(residuals, start=1):
        for mono, coeff in collect(r, basis).items():
            pairs.append((f"R{i}[{_mono_label(mono)}]", coeff))
    d = _dedupe(pairs)
    return DeterminingSystem(
        tuple(d), tuple("|".join(v) for v in d.values()), basis, tuple(assumptions), tuple(denominators)
    )


def _mono_label(mono: Expr) -> str:
    if mono == EXPR_ONE:
        return "1"
    from .pdeparse import render

    return render(mono).replace(" ", "")


def determining_system(sys, q: VectorField, indices, diff_consequences=False, assumptions=(), allow_xi0_zero=False):
    man = build_manifold(sys, q, indices, diff_consequences, allow_xi0_zero)
    res = invariance_residuals(sys, q, man, with_denominators=True)
    ds = split_determining([n for n, _ in res], assumptions=assumptions, denominators=[d for _, d in res])
    ds.meta["indices"] = man.indices
    ds.meta["diff_consequences"] = diff_consequences
    return ds


# --------------------------------------------------------------------------
# autoreduction (used only for comparison, under recorded assumptions)


def _kill(e: Expr, rules) -> Expr:
    if not rules:
        return e

    def fn(f: Func):
        for name, alpha in rules:
            if f.name == name and all(a >= b for a, b in zip(f.deriv, alpha)):
                return Expr.const(0)
        return None

    return map_funcs(e, fn)


def _nonzero_atoms(assumptions):
    atoms, sums = set(), []
    for a in assumptions:
        a = to_expr(a)
        if len(a.terms) == 1:
            (m, _), = a.terms.items()
            atoms.update(b for b, _ in m)
        else:
            sums.append(a)
    return atoms, sums


def strip_factors(e: Expr, assumptions) -> Expr:
    """Remove monomial and polynomial factors that are assumed nonzero."""
    atoms, sums = _nonzero_atoms(assumptions)
    num, _ = clear_denominators(e)
    content = monomial_content(num)
    if content != EXPR_ONE:
        (m, _), = content.terms.items()
        keep = tuple((b, x) for b, x in m if b in atoms)
        if keep:
            num = num * power(Expr({keep: Fraction(1)}), -1)
    for s in sums:
        while True:
            q = exact_divide(num, s)
            if q is None or q.is_zero:
                break
            num = q
    return num


def _rule_of(e: Expr, unknowns):
    if len(e.terms) != 1:
        return None
    (m, _), = e.terms.items()
    if len(m) != 1:
        return None
    b, x = m[0]
    if type(b) is Func and b.name in unknowns and type(x) is Fraction and x > 0:
        return (b.name, b.deriv)
    return None


def _minimal_rules(rules):
    out = []
    for r in sorted(set(rules), key=lambda r: (r[0], sum(r[1]), r[1])):
        if not any(o[0] == r[0] and all(a >= b for a, b in zip(r[1], o[1])) for o in out):
            out.append(r)
    return out


def reduce_system(ds: DeterminingSystem, assumptions=None, unknowns=UNKNOWNS, extra_rules=()) -> DeterminingSystem:
    """Fixpoint of zero-derivative rule propagation and nonzero-factor stripping."""
    assumptions = tuple(ds.assumptions if assumptions is None else assumptions)
    rules = list(extra_rules)
    pairs = list(ds.items())
    rule_labels = {}
    for _ in range(50):
        changed = False
        nxt = []
        for lab, e in pairs:
            e2 = _kill(e, rules)
            e2 = strip_factors(e2, assumptions) if not e2.is_zero else e2
            if e2.is_zero:
                changed = True
                continue
            r = _rule_of(e2, unknowns)
            if r is not None:
                rule_labels.setdefault(r, []).append(lab)
                if r not in rules:
                    rules.append(r)
                changed = True
                continue
            if e2 != e:
                changed = True
            nxt.append((lab, e2))
        d = _dedupe(nxt)
        pairs = [("|".join(v), e) for e, v in d.items()]
        if not changed:
            break
    else:
        raise CondsymError("reduction did not reach a fixpoint")
    mins = _minimal_rules(rules)
    eqs, labs = [], []
    for name, alpha in mins:
        eqs.append(rule_expr(name, alpha, unknowns_args(ds, name)))
        labs.append("|".join(rule_labels.get((name, alpha), ["assumed"])))
    for lab, e in sorted(pairs, key=lambda p: p[1].key):
        eqs.append(e)
        labs.append(lab)
    return DeterminingSystem(
        tuple(eqs), tuple(labs), ds.basis, assumptions, ds.denominators, tuple(mins), dict(ds.meta)
    )


def unknowns_args(ds: DeterminingSystem, name: str):
    for e in ds.equations:
        for a in e.atoms:
            if type(a) is Func and a.name == name:
                return a.args
    return tuple(Expr.atom(v) for v in (T, X)) + tuple(Expr.atom(Jet(a)) for a in ("u", "v"))


def rule_expr(name: str, alpha, args) -> Expr:
    return Expr.atom(Func(name, tuple(args), tuple(alpha)))


# --------------------------------------------------------------------------
# normalization xi0 -> 1


def _with_slots(name: str, n: int) -> Expr:
    return func(name, [slot(j) for j in range(n)])


def normalize_xi0(obj, new_xi: str = "xi", unknowns=UNKNOWNS):
    """Substitute xi1 = xi0 * xi, eta_k = xi0 * eta_k and set xi0 -> 1.

    For an operator this divides every coefficient by xi0.  For a determining
    system the result records whether xi0 dropped out completely
    (meta['xi0_free']).
    """
    if isinstance(obj, VectorField):
        if obj.xi0.is_zero:
            raise CondsymError("xi0-zero branch unsupported")
        from .symkernel import cancel

        inv = power(obj.xi0, -1)
        return VectorField(
            Expr.const(1),
            cancel(obj.xi1 * inv),
            tuple(cancel(e * inv) for e in obj.eta),
            obj.deps,
        )
    ds: DeterminingSystem = obj
    xi0, xi1 = unknowns[0], unknowns[1]
    n = len(unknowns_args(ds, xi0))
    defs = {xi1: _with_slots(xi0, n) * _with_slots(new_xi, n)}
    for name in unknowns[2:]:
        defs[name] = _with_slots(xi0, n) * _with_slots(name, n)
    pairs = [(lab, substitute_functions(e, defs)) for lab, e in ds.items()]
    staged = DeterminingSystem(
        tuple(e for _, e in pairs), tuple(lab for lab, _ in pairs), ds.basis, ds.assumptions, ds.denominators, (), dict(ds.meta)
    )
    new_unknowns = (xi0, new_xi) + tuple(unknowns[2:])
    red = reduce_system(staged, unknowns=new_unknowns)
    xi0_free = True

    def to_one(f: Func):
        nonlocal xi0_free
        if f.name != xi0:
            return None
        if any(f.deriv):
            xi0_free = False
            return Expr.const(0)
        return Expr.const(1)

    eqs = []
    labs = []
    for lab, e in red.items():
        if any(type(a) is Func and a.name == xi0 for a in e.atoms) and _rule_of(e, (xi0,)) is not None:
            continue  # rules on xi0 say only which variables xi0 depends on
        eqs.append(map_funcs(e, to_one))
        labs.append(lab)
    assumptions = tuple(a for a in ds.assumptions if not any(type(b) is Func and b.name == xi0 for b in a.atoms))
    out = DeterminingSystem(tuple(eqs), tuple(labs), ds.basis, assumptions, (), (), dict(ds.meta))
    out = reduce_system(out, unknowns=new_unknowns)
    out.meta["xi0_free"] = xi0_free
    out.meta["normalized"] = True
    return out


# --------------------------------------------------------------------------
# the example restriction xi1 = eta1_v = eta2_u = 0


EXAMPLE_RULES = (("xi1", (0, 0, 0, 0)), ("eta1", (0, 0, 0, 1)), ("eta2", (0, 0, 1, 0)))


def restrict_example(ds: DeterminingSystem, rules=EXAMPLE_RULES) -> DeterminingSystem:
    """Impose xi1 = eta1_v = eta2_u = 0 and reduce.

    The surviving zero-derivative rules describe the ansatz shape and are kept in
    meta['ansatz_rules']; equations holds only the remaining conditions.
    """
    red = reduce_system(ds, extra_rules=rules)
    keep = [(lab, e) for lab, e in red.items() if _rule_of(e, UNKNOWNS) is None]
    ansatz = tuple(r for r in red.rules if r not in rules)
    out = DeterminingSystem(
        tuple(e for _, e in keep), tuple(lab for lab, _ in keep), ds.basis, red.assumptions, ds.denominators, red.rules, dict(ds.meta)
    )
    out.meta["ansatz_rules"] = ansatz
    return out


def impose_zero(ds: DeterminingSystem, name: str, alpha) -> DeterminingSystem:
    """Impose that a derivative of a given (non-unknown) function vanishes, e.g. d2_v = 0."""
    eqs = [_kill(e, [(name, tuple(alpha))]) for e in ds.equations]
    d = _dedupe(zip(ds.labels, eqs))
    return DeterminingSystem(tuple(d), tuple("|".join(v) for v in d.values()), ds.basis, ds.assumptions, ds.denominators, ds.rules, dict(ds.meta))


# --------------------------------------------------------------------------
# renaming (u <-> v covariance)


def rename(e: Expr, deps: dict, funcs: dict) -> Expr:
    """Rename dependent variables and function symbols.

    funcs maps name -> (new name, permutation) where argument j of the new
    application is argument perm[j] of the old one.
    """

    def fn(f: Func):
        if f.name not in funcs:
            return None
        new, perm = funcs[f.name]
        args = tuple(f.args[p] for p in perm)
        deriv = tuple(f.deriv[p] for p in perm)
        return Expr.atom(Func(new, args, deriv))

    e = map_funcs(e, fn)
    jets = {j: Expr.atom(Jet(deps.get(j.name, j.name), j.nt, j.nx)) for j in e.jets()}
    return substitute(e, jets)


SWAP_UV = (
    {"u": "v", "v": "u"},
    {
        "d1": ("d2", (0,)),
        "d2": ("d1", (0,)),
        "C1": ("C2", (1, 0)),
        "C2": ("C1", (1, 0)),
        "xi0": ("xi0", (0, 1, 3, 2)),
        "xi1": ("xi1", (0, 1, 3, 2)),
        "eta1": ("eta2", (0, 1, 3, 2)),
        "eta2": ("eta1", (0, 1, 3, 2)),
    },
)


def rename_system(ds: DeterminingSystem, deps: dict, funcs: dict) -> DeterminingSystem:
    eqs = [rename(e, deps, funcs) for e in ds.equations]
    d = _dedupe(zip(ds.labels, eqs))
    asm = tuple(rename(a, deps, funcs) for a in ds.assumptions)
    return DeterminingSystem(tuple(d), tuple("|".join(v) for v in d.values()), ds.basis, asm, ds.denominators, (), dict(ds.meta))


# --------------------------------------------------------------------------
# comparison


@dataclass
class CompareReport:
    status: str
    matched_pairs: list
    unmatched_a: list
    unmatched_b: list
    assumptions: list

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "matched_pairs": [list(p) for p in self.matched_pairs],
            "unmatched_a": list(self.unmatched_a),
            "unmatched_b": list(self.unmatched_b),
            "assumptions": list(self.assumptions),
        }


def _bijection(a: DeterminingSystem, b: DeterminingSystem):
    ia = {monic(e): lab for lab, e in a.items()}
    ib = {monic(e): lab for lab, e in b.items()}
    pairs = [(ia[e], ib[e]) for e in ia if e in ib]
    ua = [lab for e, lab in ia.items() if e not in ib]
    ub = [lab for e, lab in ib.items() if e not in ia]
    return pairs, ua, ub


def _xi0_atom(ds: DeterminingSystem, xi0="xi0"):
    args = unknowns_args(ds, xi0)
    return Expr.atom(Func(xi0, tuple(args), (0,) * len(args)))


def _in_span(target: Expr, gens: list) -> bool:
    """Is target a rational linear combination of gens (exact Gaussian elimination)?"""
    rows = []
    pivots = []
    for g in gens:
        v = dict(g.terms)
        for (pm, prow) in zip(pivots, rows):
            if pm in v:
                c = v[pm]
                for m, x in prow.items():
                    nv = v.get(m, 0) - c * x
                    if nv:
                        v[m] = nv
                    else:
                        v.pop(m, None)
        if not v:
            continue
        pm = min(v, key=lambda m: repr(m))
        c = v[pm]
        v = {m: x / c for m, x in v.items()}
        for k, prow in enumerate(rows):
            if pm in prow:
                cc = prow[pm]
                for m, x in v.items():
                    nv = prow.get(m, 0) - cc * x
                    if nv:
                        prow[m] = nv
                    else:
                        prow.pop(m, None)
        rows.append(v)
        pivots.append(pm)
    v = dict(target.terms)
    for pm, prow in zip(pivots, rows):
        if pm in v:
            c = v[pm]
            for m, x in prow.items():
                nv = v.get(m, 0) - c * x
                if nv:
                    v[m] = nv
                else:
                    v.pop(m, None)
    return not v


def _combination_cover(a: DeterminingSystem, b: DeterminingSystem, powers=range(-2, 3)):
    """Labels of a's equations that are not combinations of b's with multipliers c * xi0^j."""
    x0 = _xi0_atom(b)
    gens = [e * power(x0, j) for e in b.equations for j in powers]
    return [lab for lab, e in a.items() if not _in_span(e, gens)]


def compare_systems(a: DeterminingSystem, b: DeterminingSystem, assumptions=None, unknowns=UNKNOWNS) -> CompareReport:
    pairs, ua, ub = _bijection(a, b)
    from .pdeparse import render

    if not ua and not ub:
        return CompareReport("identical", pairs, [], [], [render(x) + " != 0" for x in (assumptions or ())])
    if assumptions is None:
        assumptions = tuple(dict.fromkeys(tuple(a.assumptions) + tuple(b.assumptions)))
    asm_text = [render(x) + " != 0" for x in assumptions]
    ra = reduce_system(a, assumptions, unknowns)
    rb = reduce_system(b, assumptions, unknowns)
    pairs, ua, ub = _bijection(ra, rb)
    if not ua and not ub:
        return CompareReport("equivalent-up-to-combination", pairs, [], [], asm_text)
    # fall back to linear combinations with xi0-power multipliers
    ca = _combination_cover(ra, rb)
    cb = _combination_cover(rb, ra)
    if not ca and not cb:
        return CompareReport("equivalent-up-to-combination", pairs, [], [], asm_text)
    return CompareReport("mismatch", pairs, ca, cb, asm_text)


def system_from_source(spec, unknowns=UNKNOWNS) -> DeterminingSystem:
    """Determining system from the [equations] and [assumptions] blocks of a parsed file."""
    eqs = [clear_denominators(e)[0] for _, e in spec.equations]
    labs = [lab for lab, _ in spec.equations]
    return DeterminingSystem(tuple(eqs), tuple(labs), (), tuple(spec.assumptions))
