"""Text grammar for expressions, PDE systems, operators and side constraints.

See docs/grammar.md for the EBNF.  Every symbol must be declared: parameters in
``[params]``, function symbols with their argument names in ``[functions]``,
dependent variables in ``[dependent]`` (or implied by the system left-hand
sides).  ``t`` and ``x`` are always the independent variables and ``exp`` is the
only builtin function.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

from .jetspace import T, X, EvolutionSystem, VectorField, total_derivative
from .symkernel import (
    Add,
    ConstBase,
    Expr,
    Func,
    Jet,
    KernelError,
    Mul,
    Num,
    Param,
    Pow,
    Slot,
    Var,
    diff_partial,
    func,
    power,
    to_expr,
)


class ParseError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        self.msg = msg
        self.line = line
        self.col = col
        where = f"line {line}, column {col}: " if line else (f"column {col}: " if col else "")
        super().__init__(where + msg)


# --------------------------------------------------------------------------
# scope


@dataclass
class Scope:
    params: list = field(default_factory=list)
    deps: list = field(default_factory=list)
    functions: dict = field(default_factory=dict)  # name -> tuple of argument names
    lets: dict = field(default_factory=dict)  # name -> Expr, expanded on use

    def copy(self) -> "Scope":
        return Scope(list(self.params), list(self.deps), dict(self.functions), dict(self.lets))

    def declared(self, name: str) -> bool:
        return (
            name in self.params or name in self.deps or name in self.functions
            or name in self.lets or name in ("t", "x")
        )

    def declare_param(self, name: str):
        if name not in self.params:
            self.params.append(name)

    def default_arg(self, name: str) -> Expr | None:
        if name == "t":
            return Expr.atom(T)
        if name == "x":
            return Expr.atom(X)
        if name in self.deps:
            return Expr.atom(Jet(name))
        if name in self.params:
            return Expr.atom(Param(name))
        return None


# --------------------------------------------------------------------------
# unicode folding

_UNICODE = {
    "λ": "lambda", "ξ": "xi", "η": "eta", "α": "alpha", "ω": "omega", "β": "beta",
    "μ": "mu", "−": "-", "·": "*", "×": "*", "′": "'", "″": "''",
}
for _i, (_sup, _sub) in enumerate(zip("⁰¹²³⁴⁵⁶⁷⁸⁹", "₀₁₂₃₄₅₆₇₈₉")):
    _UNICODE[_sup] = str(_i)
    _UNICODE[_sub] = str(_i)


def fold_unicode(text: str):
    """ASCII version of text plus, per output character, its 1-based source column."""
    out = []
    cols = []
    for i, ch in enumerate(text, start=1):
        rep = _UNICODE.get(ch, ch)
        out.append(rep)
        cols.extend([i] * len(rep))
    cols.append(len(text) + 1)
    return "".join(out), cols


# --------------------------------------------------------------------------
# lexer

_TOKEN = re.compile(
    r"""
     (?P<ws>\s+)
    |(?P<num>\d+(?:\.\d+)?)
    |(?P<name>[A-Za-z][A-Za-z0-9]*(?:_(?:\{[0-9,\s]*\}|[A-Za-z0-9]+))?'*)
    |(?P<suffix>_[A-Za-z]+)
    |(?P<op>[-+*/^(),])
    """,
    re.X,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def _lex(text: str, line: int, cols):
    toks = []
    i = 0
    while i < len(text):
        m = _TOKEN.match(text, i)
        if not m:
            raise ParseError(f"unexpected character {text[i]!r}", line, cols[i])
        kind = m.lastgroup
        if kind != "ws":
            toks.append(Token(kind, m.group(), i))
        i = m.end()
    toks.append(Token("end", "", len(text)))
    return toks


# --------------------------------------------------------------------------
# expression parser


class _Parser:
    def __init__(self, text: str, scope: Scope, line: int = 0, cols=None):
        if cols is None:
            text, cols = fold_unicode(text)
        self.text, self.cols = text, cols
        self.scope = scope
        self.line = line
        self.toks = _lex(self.text, line, self.cols)
        self.i = 0
        self.divergences = []

    # helpers
    def err(self, msg, tok=None):
        tok = tok or self.toks[self.i]
        return ParseError(msg, self.line, self.cols[min(tok.pos, len(self.cols) - 1)])

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def accept(self, text):
        if self.peek().kind == "op" and self.peek().text == text:
            return self.take()
        return None

    def expect(self, text):
        if not self.accept(text):
            tok = self.peek()
            found = tok.text or "end of input"
            raise self.err(f"expected {text!r}, found {found!r}")

    # grammar
    def parse(self) -> Expr:
        if self.peek().kind == "end":
            raise self.err("empty expression")
        e = self.expr()
        if self.peek().kind != "end":
            raise self.err(f"unexpected {self.peek().text!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            if self.accept("+"):
                e = e + self.term()
            elif self.accept("-"):
                e = e - self.term()
            else:
                return e

    def term(self) -> Expr:
        e = self.unary()
        while True:
            if self.accept("*"):
                e = e * self.unary()
            elif self.peek().kind == "op" and self.peek().text == "/":
                tok = self.take()
                d = self.unary()
                if d.is_zero:
                    raise self.err("zero denominator", tok)
                e = e * self._pow(d, -1, tok)
            else:
                return e

    def unary(self) -> Expr:
        if self.accept("-"):
            return -self.unary()
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.postfix()
        tok = self.peek()
        if self.accept("^"):
            return self._pow(base, self.unary(), tok)
        return base

    def _pow(self, base, e, tok):
        try:
            return power(base, e)
        except KernelError as exc:
            raise self.err(str(exc), tok) from None

    def postfix(self) -> Expr:
        if self.accept("("):
            inner = self.expr()
            self.expect(")")
            nxt = self.peek()
            if nxt.kind == "suffix" and nxt.pos == self.toks[self.i - 1].pos + 1:
                self.take()
                out = inner
                for ch in nxt.text[1:]:
                    if ch not in "tx":
                        raise self.err("total derivative suffix must use t and x only", nxt)
                    self.divergences.append((inner, ch))
                    out = total_derivative(out, ch)
                return out
            return inner
        return self.primary()

    def primary(self) -> Expr:
        tok = self.take()
        if tok.kind == "num":
            return Expr.const(Fraction(tok.text))
        if tok.kind == "name":
            return self.name(tok)
        if tok.kind == "end":
            raise self.err("unexpected end of input", tok)
        raise self.err(f"unexpected {tok.text!r}", tok)

    def name(self, tok) -> Expr:
        text = tok.text
        primes = len(text) - len(text.rstrip("'"))
        text = text.rstrip("'")
        base, _, suffix = text.partition("_")
        sc = self.scope
        if base in sc.lets and not suffix and not primes:
            return sc.lets[base]
        if base == "exp" and not suffix and not primes:
            args = self.call_args(tok)
            if len(args) != 1:
                raise self.err("exp takes one argument", tok)
            return func("exp", args)
        if base in sc.functions:
            argnames = sc.functions[base]
            deriv = self.func_deriv(base, argnames, suffix, primes, tok)
            if self.peek().kind == "op" and self.peek().text == "(":
                args = self.call_args(tok)
                if len(args) != len(argnames):
                    raise self.err(f"{base} takes {len(argnames)} argument(s), got {len(args)}", tok)
            else:
                args = []
                for a in argnames:
                    d = sc.default_arg(a)
                    if d is None:
                        raise self.err(f"function {base} needs explicit arguments", tok)
                    args.append(d)
            return func(base, args, deriv)
        if primes:
            raise self.err(f"prime on non-function {base!r}", tok)
        if base in sc.deps:
            if not suffix:
                return Expr.atom(Jet(base))
            if not re.fullmatch(r"[tx]+", suffix):
                raise self.err(f"malformed jet suffix {suffix!r}", tok)
            return Expr.atom(Jet(base, suffix.count("t"), suffix.count("x")))
        if suffix:
            if not sc.declared(base):
                raise self.err(f"undeclared symbol {base!r}", tok)
            raise self.err(f"derivative suffix on {base!r}, which is not a function or dependent variable", tok)
        if base == "t":
            return Expr.atom(T)
        if base == "x":
            return Expr.atom(X)
        if base in sc.params:
            return Expr.atom(Param(base))
        raise self.err(f"undeclared symbol {base!r}", tok)

    def func_deriv(self, name, argnames, suffix, primes, tok):
        n = len(argnames)
        if primes:
            if suffix:
                raise self.err("mixed prime and suffix derivatives", tok)
            if n != 1:
                raise self.err(f"prime derivative needs a unary function, {name} has {n} arguments", tok)
            return (primes,)
        if not suffix:
            return (0,) * n
        if suffix.startswith("{"):
            try:
                idx = tuple(int(s) for s in suffix[1:-1].split(","))
            except ValueError:
                raise self.err(f"malformed derivative index {suffix!r}", tok) from None
            if len(idx) != n or any(i < 0 for i in idx):
                raise self.err(f"derivative index {suffix!r} does not fit {name}", tok)
            return idx
        counts = [0] * n
        rest = suffix
        order = sorted(range(n), key=lambda j: -len(argnames[j]))
        while rest:
            for j in order:
                if rest.startswith(argnames[j]):
                    counts[j] += 1
                    rest = rest[len(argnames[j]):]
                    break
            else:
                raise self.err(f"derivative suffix {suffix!r} does not name arguments of {name}", tok)
        return tuple(counts)

    def call_args(self, tok):
        self.expect("(")
        args = [self.expr()]
        while self.accept(","):
            args.append(self.expr())
        self.expect(")")
        return args


def parse_expr(text: str, scope: Scope | None = None, line: int = 0) -> Expr:
    return _Parser(text, scope or Scope(), line).parse()


# --------------------------------------------------------------------------
# renderer


def _fmt_num(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def _render_func(f: Func, scope: Scope | None) -> str:
    argnames = scope.functions.get(f.name) if scope else None
    if f.name == "exp":
        return f"exp({render(f.args[0], scope)})"
    name = f.name
    if any(f.deriv):
        simple = argnames is not None and all(re.fullmatch(r"[A-Za-z][A-Za-z0-9]*", a) for a in argnames)
        # suffix names must decode uniquely: no argument name may prefix another
        if simple and not any(a != b and b.startswith(a) for a in argnames for b in argnames):
            name += "_" + "".join(a * n for a, n in zip(argnames, f.deriv))
        else:
            name += "_{" + ",".join(map(str, f.deriv)) + "}"
    if argnames is not None and scope is not None:
        defaults = [scope.default_arg(a) for a in argnames]
        if all(d is not None for d in defaults) and tuple(defaults) == f.args:
            return name
    return f"{name}({', '.join(render(a, scope) for a in f.args)})"


def _render_node(n, scope, prec: int) -> str:
    # prec: 0 sum context, 1 product factor, 2 power base
    if isinstance(n, Num):
        s = _fmt_num(n.value)
        if (n.value < 0 or n.value.denominator != 1) and prec >= 1:
            return f"({s})"
        return s
    if isinstance(n, Add):
        parts = []
        for k, c in enumerate(n.children):
            s = _render_node(c, scope, 0)
            if k and s.startswith("-"):
                parts.append(" - " + s[1:])
            elif k:
                parts.append(" + " + s)
            else:
                parts.append(s)
        s = "".join(parts)
        return f"({s})" if prec >= 1 else s
    if isinstance(n, Mul):
        ch = list(n.children)
        lead = ""
        if isinstance(ch[0], Num):
            c = ch.pop(0).value
            if c == -1:
                lead = "-"
            elif c < 0:
                lead = "-" + _fmt_num(-c) + "*"
            else:
                lead = _fmt_num(c) + "*"
        s = lead + "*".join(_render_node(c, scope, 1) for c in ch)
        return f"({s})" if prec >= 2 or (prec >= 1 and lead.startswith("-")) else s
    if isinstance(n, Pow):
        b = _render_node(n.base, scope, 2)
        e = n.exp
        if isinstance(e, Num) and e.value.denominator == 1 and e.value >= 0:
            es = _fmt_num(e.value)
        else:
            es = "(" + _render_node(e, scope, 0) + ")"
        return f"{b}^{es}"
    if isinstance(n, Func):
        return _render_func(n, scope)
    if isinstance(n, (Jet, Param, Var)):
        return str(n)
    if isinstance(n, Slot):
        return f"#{n.index}"
    if isinstance(n, ConstBase):
        return _fmt_num(n.value)
    raise TypeError(f"cannot render {type(n).__name__}")


def render(e, scope: Scope | None = None) -> str:
    """Text form of e; parse_expr(render(e, scope), scope) reproduces e."""
    e = to_expr(e)
    return _render_node(e.tree(), scope, 0)


# --------------------------------------------------------------------------
# source files


@dataclass
class Restriction:
    """Disjunction of atomic conditions; each is (expr, 'eq'|'ne')."""

    alternatives: tuple
    text: str = ""

    def holds(self, fn) -> bool:
        """fn maps an Expr to a number; a condition holds if it is (non)zero accordingly."""
        for e, kind in self.alternatives:
            v = fn(e)
            if (kind == "ne" and abs(v) > 1e-12) or (kind == "eq" and abs(v) <= 1e-12):
                return True
        return False


@dataclass
class SourceSpec:
    scope: Scope
    system: object = None
    operator: VectorField | None = None
    rewrites: dict = field(default_factory=dict)  # Func atom -> Expr
    param_defs: dict = field(default_factory=dict)  # param name -> Expr
    restrictions: list = field(default_factory=list)
    guards: list = field(default_factory=list)  # restrictions that only exclude Lie operators
    constraints: list = field(default_factory=list)  # Expr == 0
    equations: list = field(default_factory=list)  # (label, Expr)
    assumptions: list = field(default_factory=list)  # Expr != 0
    inverse: dict = field(default_factory=dict)  # name -> Expr or "numeric"
    meta: dict = field(default_factory=dict)
    divergences: list = field(default_factory=list)

    def parse(self, text: str) -> Expr:
        return parse_expr(text, self.scope)


_BLOCKS = {
    "params", "dependent", "functions", "system", "operator", "constraints",
    "equations", "assumptions", "inverse", "meta", "let", "guards",
}


def _split_blocks(text: str):
    blocks = []
    cur = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        m = re.fullmatch(r"\s*\[([A-Za-z]+)\]\s*", line)
        if m:
            name = m.group(1).lower()
            if name not in _BLOCKS:
                raise ParseError(f"unknown block [{name}]", lineno, 1)
            cur = (name, [])
            blocks.append(cur)
            continue
        if cur is None:
            raise ParseError("content before the first block header", lineno, 1)
        cur[1].append((lineno, line))
    return blocks


def _names(lines):
    out = []
    for lineno, line in lines:
        folded, cols = fold_unicode(line)
        for m in re.finditer(r"[^,\s]+", folded):
            name = m.group()
            if not re.fullmatch(r"[A-Za-z][A-Za-z0-9]*", name):
                raise ParseError(f"bad name {name!r}", lineno, cols[m.start()])
            out.append(name)
    return out


def _split_eq(folded: str, lineno: int, cols, ops=("!=", "=")):
    for op in ops:
        idx = folded.find(op)
        if idx >= 0:
            if op == "=" and folded[idx - 1 : idx] == "!":
                continue
            return folded[:idx], op, folded[idx + len(op) :], idx, idx + len(op)
    return None


def _sub(p_text: str, cols, start: int, scope: Scope, lineno: int, parser_out=None) -> Expr:
    p = _Parser(p_text, scope, lineno, cols[start:])
    e = p.parse()
    if parser_out is not None:
        parser_out.extend(p.divergences)
    return e


def parse_source(text: str, scope: Scope | None = None) -> SourceSpec:
    """Parse a block-structured file into a :class:`SourceSpec`."""
    blocks = _split_blocks(text)
    scope = scope.copy() if scope else Scope()
    spec = SourceSpec(scope)
    by = {}
    for name, lines in blocks:
        by.setdefault(name, []).extend(lines)

    scope.params.extend(n for n in _names(by.get("params", [])) if n not in scope.params)
    scope.deps.extend(n for n in _names(by.get("dependent", [])) if n not in scope.deps)
    for lineno, line in by.get("functions", []):
        folded, cols = fold_unicode(line)
        pat = re.compile(r"\s*([A-Za-z][A-Za-z0-9]*)\s*\(([^)]*)\)\s*(?:,|$)")
        pos = 0
        while pos < len(folded):
            m = pat.match(folded, pos)
            if not m:
                raise ParseError("function declarations have the form name(arg, ...)", lineno, cols[pos])
            pos = m.end()
            args = tuple(a.strip() for a in m.group(2).split(",") if a.strip())
            for a in args:
                if not re.fullmatch(r"[A-Za-z][A-Za-z0-9]*", a):
                    raise ParseError(f"bad argument name {a!r}", lineno, cols[m.start(2)])
            scope.functions[m.group(1)] = args
    if not scope.deps:
        for lineno, line in by.get("system", []):
            folded, _ = fold_unicode(line)
            m = re.match(r"\s*([A-Za-z][A-Za-z0-9]*)_", folded)
            if m and m.group(1) not in scope.deps:
                scope.deps.append(m.group(1))
    clash = set(scope.params) & (set(scope.functions) | set(scope.deps))
    if clash:
        raise ParseError(f"name declared twice: {sorted(clash)[0]}")

    for name, lines in by.items():
        if name == "meta":
            for lineno, line in lines:
                k, _, v = line.partition("=")
                spec.meta[k.strip()] = v.strip()
    for lineno, line in by.get("let", []):
        folded, cols = fold_unicode(line)
        parts = _split_eq(folded, lineno, cols, ops=("=",))
        name = parts[0].strip() if parts else ""
        if not re.fullmatch(r"[A-Za-z][A-Za-z0-9]*", name):
            raise ParseError("let entries have the form 'name = expr'", lineno, 1)
        if scope.declared(name):
            raise ParseError(f"let name {name!r} is already declared", lineno, 1)
        scope.lets[name] = _sub(parts[2], cols, parts[4], scope, lineno)
    if "system" in by:
        spec.system = _parse_system_block(by["system"], spec)
    if "operator" in by:
        spec.operator = _parse_operator_block(by["operator"], spec)
    for lineno, line in by.get("constraints", []):
        _parse_constraint(lineno, line, spec)
    for lineno, line in by.get("guards", []):
        n = len(spec.restrictions)
        _parse_constraint(lineno, line, spec)
        if len(spec.restrictions) != n + 1:
            raise ParseError("guards must be '!=' conditions", lineno, 1)
        spec.guards.append(spec.restrictions.pop())
    for k, (lineno, line) in enumerate(by.get("equations", []), start=1):
        folded, cols = fold_unicode(line)
        label = str(k)
        m = re.match(r"\s*([A-Za-z0-9.]+)\s*:", folded)
        off = 0
        if m:
            label = m.group(1)
            off = m.end()
        parts = _split_eq(folded[off:], lineno, cols, ops=("=",))
        if parts is None:
            e = _sub(folded[off:], cols, off, scope, lineno)
        else:
            lhs, _, rhs, i0, i1 = parts
            e = _sub(lhs, cols, off, scope, lineno) - _sub(rhs, cols, off + i1, scope, lineno)
        spec.equations.append((label, e))
    for lineno, line in by.get("assumptions", []):
        folded, cols = fold_unicode(line)
        parts = _split_eq(folded, lineno, cols, ops=("!=",))
        if parts is None:
            raise ParseError("assumptions have the form 'expr != 0'", lineno, 1)
        lhs, _, rhs, _, i1 = parts
        spec.assumptions.append(_sub(lhs, cols, 0, scope, lineno) - _sub(rhs, cols, i1, scope, lineno))
    for lineno, line in by.get("inverse", []):
        folded, cols = fold_unicode(line)
        parts = _split_eq(folded, lineno, cols, ops=("=",))
        if parts is None:
            raise ParseError("inverse entries have the form 'U = expr'", lineno, 1)
        lhs, _, rhs, _, i1 = parts
        name = lhs.strip()
        if rhs.strip() == "numeric":
            spec.inverse[name] = "numeric"
        else:
            # inverse maps are written in the canonical variables, which need not be declared
            sc = scope.copy()
            for v in ("u", "v"):
                if v not in sc.deps:
                    sc.deps.append(v)
            spec.inverse[name] = _sub(rhs, cols, i1, sc, lineno)
    return spec


def _parse_system_block(lines, spec: SourceSpec):
    from .kirchhoff import RDCanonical, RDOriginal

    scope = spec.scope
    forms = []
    rows = {}
    for lineno, line in lines:
        folded, cols = fold_unicode(line)
        parts = _split_eq(folded, lineno, cols, ops=("=",))
        if parts is None:
            raise ParseError("system equations have the form 'lhs = rhs'", lineno, 1)
        lhs_t, _, rhs_t, _, i1 = parts
        lhs = _sub(lhs_t, cols, 0, scope, lineno)
        divs = []
        rhs = _sub(rhs_t, cols, i1, scope, lineno, divs)
        if not lhs.is_atom() or type(lhs.as_atom()) is not Jet:
            raise ParseError("left-hand side must be a single derivative", lineno, cols[0])
        j = lhs.as_atom()
        if j.nt == 1 and j.nx == 0:
            if any(jj.nt for jj in rhs.jets()):
                raise ParseError("time derivatives on the right-hand side", lineno, cols[i1])
            form = "original" if divs else "evolution"
        elif j.nt == 0 and j.nx >= 2:
            form = "canonical"
        else:
            raise ParseError(f"unsupported left-hand side {j}", lineno, cols[0])
        if j.name in rows:
            raise ParseError(f"second equation for {j.name}", lineno, cols[0])
        forms.append(form)
        rows[j.name] = (j, rhs, divs, lineno)
    if set(forms) == {"original", "evolution"}:
        # a plain c*V_xx with constant c is a divergence term with D = c
        for a, (j, rhs, divs, lineno) in rows.items():
            if divs:
                continue
            c = diff_partial(rhs, Jet(a, 0, 2))
            if c.is_zero or c.atoms - {x for x in c.atoms if type(x) is Param}:
                raise ParseError("mixed system forms (evolution, divergence and canonical)", lineno, 1)
            divs.append((c * Expr.atom(Jet(a, 0, 1)), "x"))
        forms = ["original"]
    if len(set(forms)) > 1:
        raise ParseError("mixed system forms (evolution, divergence and canonical)", lines[0][0], 1)
    deps = tuple(scope.deps) if scope.deps else tuple(rows)
    if set(deps) != set(rows):
        raise ParseError("one equation per dependent variable required", lines[0][0], 1)
    form = forms[0]
    if form == "evolution":
        return EvolutionSystem(deps, tuple(rows[a][1] for a in deps), tuple(scope.params))
    if form == "canonical":
        d, C = [], []
        for a in deps:
            j, rhs, _, lineno = rows[a]
            ut = Jet(a, 1, 0)
            c = diff_partial(rhs, ut)
            if any(jj.order for jj in c.jets()):
                raise ParseError(f"canonical form needs {a}_xx = d({a})*{a}_t + C", lineno, 1)
            rest = rhs - c * Expr.atom(ut)
            if any(jj.order for jj in rest.jets()):
                raise ParseError(f"canonical form needs {a}_xx = d({a})*{a}_t + C", lineno, 1)
            d.append(c)
            C.append(rest)
        return RDCanonical(deps, tuple(d), tuple(C), tuple(scope.params))
    D, F = [], []
    for a in deps:
        j, rhs, divs, lineno = rows[a]
        if len(divs) != 1 or divs[0][1] != "x":
            raise ParseError("divergence form needs exactly one '(D*U_x)_x' term", lineno, 1)
        inner = divs[0][0]
        ux = Jet(a, 0, 1)
        dcoef = diff_partial(inner, ux)
        if any(jj.order for jj in dcoef.jets()) or not (inner - dcoef * Expr.atom(ux)).is_zero:
            raise ParseError("divergence term must be D(U)*U_x", lineno, 1)
        rest = rhs - total_derivative(inner, "x")
        if any(jj.order for jj in rest.jets()):
            raise ParseError("reaction term must not contain derivatives", lineno, 1)
        D.append(dcoef)
        F.append(rest)
    spec.divergences = [rows[a][2] for a in deps]
    return RDOriginal(deps, tuple(D), tuple(F), tuple(scope.params))


def _parse_operator_block(lines, spec: SourceSpec) -> VectorField:
    scope = spec.scope
    vals = {}
    for lineno, line in lines:
        folded, cols = fold_unicode(line)
        parts = _split_eq(folded, lineno, cols, ops=("=",))
        if parts is None:
            raise ParseError("operator entries have the form 'xi0 = expr'", lineno, 1)
        lhs, _, rhs, _, i1 = parts
        key = lhs.strip()
        ok = key in ("xi0", "xi1") or re.fullmatch(r"eta[1-9][0-9]*", key)
        if not ok:
            raise ParseError(f"unknown operator coefficient {key!r}", lineno, cols[0])
        vals[key] = _sub(rhs, cols, i1, scope, lineno)
    m = len(scope.deps)
    for key in vals:
        if key.startswith("eta") and int(key[3:]) > m:
            raise ParseError(f"{key} exceeds the number of dependent variables")
    zero = Expr.const(0)
    try:
        return VectorField(
            vals.get("xi0", zero),
            vals.get("xi1", zero),
            tuple(vals.get(f"eta{a}", zero) for a in range(1, m + 1)),
            tuple(scope.deps),
        )
    except KernelError as exc:
        raise ParseError(str(exc), lines[0][0], 1) from None


def _parse_constraint(lineno: int, line: str, spec: SourceSpec):
    scope = spec.scope
    folded, cols = fold_unicode(line)
    alts = []
    pos = 0
    pieces = []
    for m in re.finditer(r"\bor\b", folded):
        pieces.append((pos, folded[pos : m.start()]))
        pos = m.end()
    pieces.append((pos, folded[pos:]))
    for off, piece in pieces:
        parts = _split_eq(piece, lineno, cols)
        if parts is None:
            raise ParseError("constraints have the form 'a = b' or 'a != b'", lineno, cols[off])
        lhs, op, rhs, _, i1 = parts
        kind = "ne" if op == "!=" else "eq"
        if len(pieces) == 1 and kind == "eq":
            key = lhs.strip()
            if key in scope.params and re.fullmatch(r"[A-Za-z][A-Za-z0-9]*", key):
                spec.param_defs[key] = _sub(rhs, cols, off + i1, scope, lineno)
                return
            le = _sub(lhs, cols, off, scope, lineno)
            re_ = _sub(rhs, cols, off + i1, scope, lineno)
            if le.is_atom() and type(le.as_atom()) is Func and any(le.as_atom().deriv):
                spec.rewrites[le.as_atom()] = re_
                return
            spec.constraints.append(le - re_)
            return
        e = _sub(lhs, cols, off, scope, lineno) - _sub(rhs, cols, off + i1, scope, lineno)
        alts.append((e, kind))
    spec.restrictions.append(Restriction(tuple(alts), folded.strip()))


def render_source(spec: SourceSpec) -> str:
    """Serialize the declaration, system, operator and equation blocks."""
    from .kirchhoff import RDCanonical, RDOriginal

    sc = spec.scope
    out = []
    if sc.params:
        out += ["[params]", ", ".join(sc.params)]
    if sc.deps:
        out += ["[dependent]", ", ".join(sc.deps)]
    if sc.functions:
        out.append("[functions]")
        out += [f"{n}({', '.join(a)})" for n, a in sc.functions.items()]
    s = spec.system
    if s is not None:
        out.append("[system]")
        if isinstance(s, RDCanonical):
            for a, d, C in zip(s.deps, s.d, s.C):
                out.append(f"{a}_xx = {render(d * Expr.atom(Jet(a, 1, 0)) + C, sc)}")
        elif isinstance(s, RDOriginal):
            for a, D, F in zip(s.deps, s.D, s.F):
                rf = render(F, sc)
                rf = f"- {rf[1:]}" if rf.startswith("-") else f"+ {rf}"
                out.append(f"{a}_t = ({render(D * Expr.atom(Jet(a, 0, 1)), sc)})_x {rf}")
        else:
            for a, f in zip(s.deps, s.rhs):
                out.append(f"{a}_t = {render(f, sc)}")
    q = spec.operator
    if q is not None:
        out.append("[operator]")
        out.append(f"xi0 = {render(q.xi0, sc)}")
        out.append(f"xi1 = {render(q.xi1, sc)}")
        out += [f"eta{a} = {render(e, sc)}" for a, e in enumerate(q.eta, start=1)]
    if spec.param_defs or spec.rewrites or spec.restrictions or spec.constraints:
        out.append("[constraints]")
        out += [f"{k} = {render(v, sc)}" for k, v in spec.param_defs.items()]
        out += [f"{render(Expr.atom(k), sc)} = {render(v, sc)}" for k, v in spec.rewrites.items()]
        out += [f"{render(c, sc)} = 0" for c in spec.constraints]
        for r in spec.restrictions:
            out.append(" or ".join(f"{render(e, sc)} {'!=' if k == 'ne' else '='} 0" for e, k in r.alternatives))
    if spec.guards:
        out.append("[guards]")
        for r in spec.guards:
            out.append(" or ".join(f"{render(e, sc)} {'!=' if k == 'ne' else '='} 0" for e, k in r.alternatives))
    if spec.equations:
        out.append("[equations]")
        out += [f"{lab}: {render(e, sc)} = 0" for lab, e in spec.equations]
    if spec.assumptions:
        out.append("[assumptions]")
        out += [f"{render(e, sc)} != 0" for e in spec.assumptions]
    if spec.inverse:
        out.append("[inverse]")
        for k, v in spec.inverse.items():
            out.append(f"{k} = {v if isinstance(v, str) else render(v, sc)}")
    if spec.meta:
        out.append("[meta]")
        out += [f"{k} = {v}" for k, v in spec.meta.items()]
    return "\n".join(out) + "\n"
