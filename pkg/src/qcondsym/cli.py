"""condsym: determining systems, catalog verification, Kirchhoff transforms, comparisons.

Exit codes: 0 all checks pass, 2 parse/input error, 3 precondition violated,
4 a verification or comparison failed.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import data_path
from .catalog import (
    CatalogError,
    expected_classification,
    list_entries,
    load_entry,
    parse_assignments,
    verify_claim,
)
from .condsym import (
    CondsymError,
    build_manifold,
    compare_systems,
    determining_system,
    generic_operator,
    invariance_residuals,
    normalize_xi0,
    reduce_system,
    restrict_example,
    system_from_source,
)
from .jetspace import JetError
from .kirchhoff import KirchhoffError, RDOriginal, to_canonical, transform_operator
from .numoracle import EvalError, random_polynomial, residual_check
from .pdeparse import ParseError, Scope, SourceSpec, parse_source, render, render_source
from .symkernel import Expr, Func, KernelError, Param

EXIT_OK, EXIT_PARSE, EXIT_PRECONDITION, EXIT_FAIL = 0, 2, 3, 4
SCHEMA_ID = "qcondsym-report/1"
DEFAULT_SEED = 0


class InputError(Exception):
    """Unreadable input; maps to the parse exit code."""


@dataclass
class RunConfig:
    command: str
    inputs: list = field(default_factory=list)
    seed: int = DEFAULT_SEED
    tol: float = 1e-9
    n_points: int = 100
    fmt: str = "text"
    output: str | None = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")


def default_seed() -> int:
    env = os.environ.get("CONDSYM_SEED")
    if env is None or env == "":
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise InputError(f"CONDSYM_SEED must be an integer, got {env!r}") from None


# --------------------------------------------------------------------------
# input helpers


def read_input(name: str) -> str:
    """A filesystem path, or the name of a bundled data file (e.g. reference/first_type.sys)."""
    p = Path(name)
    if p.is_file():
        return p.read_text(encoding="utf-8")
    bundled = data_path(*name.split("/"))
    if bundled.is_file():
        return bundled.read_text(encoding="utf-8")
    raise InputError(f"no such file: {name}")


def load_source(name: str, scope: Scope | None = None) -> SourceSpec:
    return parse_source(read_input(name), scope)


def _indices(kind: str, given, m: int) -> tuple:
    if given:
        try:
            idx = tuple(int(s) for s in given.split(","))
        except ValueError:
            raise InputError(f"--indices takes comma-separated integers, got {given!r}") from None
        return idx
    if kind == "lie":
        return ()
    if kind == "first":
        return (1,)
    if kind == "nonclassical":
        return tuple(range(1, m + 1))
    raise InputError("--type p needs --indices")


def _used_functions(scope: Scope, exprs, extra=()) -> dict:
    names = set(extra)
    for e in exprs:
        for a in e.atoms:
            if type(a) is Func:
                names.add(a.name)
        for f in e.funcs():
            names.add(f.name)
    return {n: a for n, a in scope.functions.items() if n in names}


def determining_source(ds, scope: Scope) -> str:
    """Grammar text of a determining system with sequential labels."""
    sc = scope.copy()
    if ds.meta.get("normalized") and "xi" not in sc.functions and "xi1" in sc.functions:
        sc.functions["xi"] = sc.functions["xi1"]
    sc.functions = _used_functions(sc, list(ds.equations) + list(ds.assumptions))
    sc.params = [p for p in sc.params if any(Param(p) in e.atoms for e in ds.equations)]
    out = SourceSpec(sc)
    out.equations = [(f"E{i}", e) for i, e in enumerate(ds.equations, start=1)]
    out.assumptions = list(ds.assumptions)
    return render_source(out)


# --------------------------------------------------------------------------
# reports


@dataclass
class Outcome:
    command: str
    seed: int
    claims: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    text: list = field(default_factory=list)  # human-readable lines
    error: str | None = None
    exit_code: int = EXIT_OK

    def finish(self) -> "Outcome":
        if self.error is None and any(c["verdict"] != "agrees" for c in self.claims):
            self.exit_code = EXIT_FAIL
        return self

    @property
    def status(self) -> str:
        if self.error is not None:
            return "error"
        return "pass" if self.exit_code == EXIT_OK else "fail"

    def as_dict(self) -> dict:
        d = {
            "schema": SCHEMA_ID,
            "command": self.command,
            "seed": self.seed,
            "status": self.status,
            "exit_code": self.exit_code,
            "claims": self.claims,
            "details": self.details,
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2, ensure_ascii=False)


def _claim_from_result(r) -> dict:
    status = "pass" if r.passed else ("confirmed-fail" if r.confirmed_fail else "fail")
    if r.expected is None:
        verdict = "agrees" if r.passed else "disagrees"
    elif r.expected:
        verdict = "agrees" if r.passed else "disagrees"
    else:
        verdict = "agrees" if r.confirmed_fail else ("disagrees" if r.passed else "inconclusive")
    return {
        "claim-id": r.claim_id,
        "status": status,
        "verdict": verdict,
        "expected": r.expected,
        "max_violation": r.max_violation,
        "reports": [x.as_dict() for x in r.reports],
    }


def _claim_line(c: dict) -> str:
    exp = "" if c.get("expected") is None else f" expected={'pass' if c['expected'] else 'fail'}"
    mv = f" max_violation={c['max_violation']:.3e}" if "max_violation" in c else ""
    return f"{c['claim-id']}: {c['status']}{exp}{mv} -> {c['verdict']}"


# --------------------------------------------------------------------------
# commands


def cmd_detsys(cfg: RunConfig) -> Outcome:
    out = Outcome("detsys", cfg.seed)
    spec = load_source(cfg.inputs[0])
    if spec.system is None:
        raise InputError("input has no [system] block")
    sysm = spec.system
    q = spec.operator or generic_operator(tuple(sysm.deps))
    fl = cfg.flags
    idx = _indices(fl["type"], fl.get("indices"), len(sysm.deps))
    asm = tuple(spec.assumptions)
    ds = determining_system(sysm, q, idx, fl.get("diff_consequences", False), asm, fl.get("allow_xi0_zero", False))
    raw_count = len(ds)
    if not fl.get("raw"):
        ds = reduce_system(ds, asm)
    if fl.get("example"):
        ds = restrict_example(ds)
    if fl.get("xi0_normalize"):
        ds = normalize_xi0(ds)
    text = determining_source(ds, spec.scope)
    sc = spec.scope
    out.details = {
        "indices": list(idx),
        "diff_consequences": bool(fl.get("diff_consequences")),
        "reduced": not fl.get("raw"),
        "raw_equations": raw_count,
        "equations": [
            {"label": f"E{i}", "provenance": lab, "expr": render(e, sc)}
            for i, (lab, e) in enumerate(ds.items(), start=1)
        ],
        "assumptions": [render(a, sc) + " != 0" for a in ds.assumptions],
        "basis": [render(Expr.atom(j), sc) for j in ds.basis],
    }
    if "xi0_free" in ds.meta:
        out.details["xi0_free"] = ds.meta["xi0_free"]
    if cfg.output:
        Path(cfg.output).write_text(text, encoding="utf-8")
    else:
        out.text.append(text.rstrip("\n"))
    out.text.append(f"# {len(ds)} equations; assumptions: " + (", ".join(out.details["assumptions"]) or "none"))
    ref = fl.get("compare")
    if ref:
        rspec = load_source(ref)
        unknowns = ("xi0", "xi", "eta1", "eta2") if fl.get("xi0_normalize") else ("xi0", "xi1", "eta1", "eta2")
        rep = compare_systems(ds, system_from_source(rspec), unknowns=unknowns)
        ok = rep.status != "mismatch"
        out.claims.append({"claim-id": f"compare:{ref}", "status": rep.status, "verdict": "agrees" if ok else "disagrees", "expected": True})
        out.details["compare"] = rep.as_dict()
        out.text.append(_claim_line(out.claims[-1]))
    return out.finish()


def _kinds(fl) -> list:
    ks = [k for k, f in (("nonclassical", "nonclassical"), ("first_type", "first_type"), ("lie", "lie")) if fl.get(f)]
    return ks or ["nonclassical", "first_type"]


def cmd_verify(cfg: RunConfig) -> Outcome:
    out = Outcome("verify", cfg.seed)
    fl = cfg.flags
    if fl.get("catalog") is not None:
        return _verify_catalog(cfg, out)
    if not cfg.inputs:
        raise InputError("verify needs --catalog N or a system file")
    return _verify_file(cfg, out)


def _verify_catalog(cfg: RunConfig, out: Outcome) -> Outcome:
    fl = cfg.flags
    entry = load_entry(fl["catalog"])
    params = {}
    for a in fl.get("param") or []:
        params.update(parse_assignments(a))
    exp = expected_classification(entry, params)
    want = {"nonclassical": exp.nonclassical, "first_type": exp.first_type, "lie": exp.lie_degenerate}
    p_mode = "sample" if fl.get("p_sample") else "rewrite"
    out.details = {"row": entry.row, "params": {k: str(v) for k, v in sorted(params.items())}, "expected": exp.as_dict()}
    for k in _kinds(fl):
        r = verify_claim(entry, k, params, cfg.seed, cfg.n_points, cfg.tol, fl.get("samples", 3), p_mode, want[k], exp.lie_degenerate)
        out.claims.append(_claim_from_result(r))
        out.text.append(_claim_line(out.claims[-1]))
    out.text += ["  " + t for t in exp.trace]
    return out.finish()


def _verify_file(cfg: RunConfig, out: Outcome) -> Outcome:
    """Numeric check of a user system/operator pair; opaque functions get random polynomial samples."""
    fl = cfg.flags
    spec = load_source(cfg.inputs[0])
    if len(cfg.inputs) > 1:
        op = load_source(cfg.inputs[1], spec.scope)
        spec.operator = op.operator
    if spec.system is None or spec.operator is None:
        raise InputError("verify needs a [system] and an [operator] block")
    sysm = spec.system.to_evolution() if isinstance(spec.system, RDOriginal) else spec.system
    q = spec.operator
    rng = random.Random(cfg.seed)
    samples = [
        [random_polynomial(n, len(a), rng) for n, a in spec.scope.functions.items()]
        for _ in range(fl.get("samples", 3))
    ]
    branches = {"nonclassical": [tuple(range(1, len(sysm.deps) + 1))], "first_type": [(i,) for i in range(1, len(sysm.deps) + 1)], "lie": [()]}
    for k in _kinds(fl):
        reports = []
        ok_any = False
        for idx in branches[k]:
            man = build_manifold(sysm, q, idx, allow_xi0_zero=True)
            res = invariance_residuals(sysm, q, man)
            rs = [
                residual_check(res, cfg.n_points, cfg.tol, seed=cfg.seed + 7919 * (i + 1), samples=s, claim_id=f"{k}/Q{''.join(map(str, idx)) or '-'}/s{i}")
                for i, s in enumerate(samples)
            ]
            reports += rs
            ok_any = ok_any or all(r.passed for r in rs)
        c = {
            "claim-id": k,
            "status": "pass" if ok_any else ("confirmed-fail" if all(r.confirmed_fail for r in reports if not r.passed) else "fail"),
            "verdict": "agrees" if ok_any else "disagrees",
            "expected": None,
            "max_violation": max(r.max_violation for r in reports),
            "reports": [r.as_dict() for r in reports],
        }
        out.claims.append(c)
        out.text.append(_claim_line(c))
    return out.finish()


def cmd_kirchhoff(cfg: RunConfig) -> Outcome:
    out = Outcome("kirchhoff", cfg.seed)
    fl = cfg.flags
    if fl.get("catalog") is not None:
        from .catalog import instantiate

        entry = load_entry(fl["catalog"])
        spec = entry.spec
        if fl.get("param"):
            params = {}
            for a in fl["param"]:
                params.update(parse_assignments(a))
            inst = instantiate(entry, params, allow_lie=True)
            spec = SourceSpec(entry.spec.scope.copy(), inst.system, inst.operator)
            spec.scope.params = []
    else:
        if not cfg.inputs:
            raise InputError("kirchhoff needs a system file or --catalog N")
        spec = load_source(cfg.inputs[0])
        if len(cfg.inputs) > 1:
            spec.operator = load_source(cfg.inputs[1], spec.scope).operator
    if not isinstance(spec.system, RDOriginal):
        raise InputError("kirchhoff needs a system in divergence form U_t = (D(U)*U_x)_x + F")
    canon, rec = to_canonical(spec.system, numeric_fallback=not fl.get("no_numeric"))
    q = transform_operator(spec.operator, rec, not fl.get("no_numeric")) if spec.operator is not None else None
    sc = spec.scope.copy()
    sc.deps = list(canon.deps)
    for i, inv in enumerate(rec.inverse):
        if inv is None:
            sc.functions[rec.orig[i] + "inv"] = (rec.new[i],)
    res = SourceSpec(sc, canon, q)
    res.inverse = {o: (inv if inv is not None else "numeric") for o, inv in zip(rec.orig, rec.inverse)}
    text = render_source(res)
    out.details = {
        "forward": {n: render(f, spec.scope) for n, f in zip(rec.new, rec.forward)},
        "inverse": {o: (render(i, sc) if i is not None else "numeric") for o, i in zip(rec.orig, rec.inverse)},
        "d": [render(d, sc) for d in canon.d],
        "operator": None if q is None else [render(c, sc) for c in q.coefficients()],
    }
    if cfg.output:
        Path(cfg.output).write_text(text, encoding="utf-8")
    else:
        out.text.append(text.rstrip("\n"))
    return out.finish()


def cmd_catalog(cfg: RunConfig) -> Outcome:
    out = Outcome("catalog", cfg.seed)
    fl = cfg.flags
    if fl["action"] == "list":
        rows = []
        for e in list_entries():
            sc = e.spec.scope
            q = e.operator
            rows.append({"row": e.row, "params": list(e.params), "omega": render(e.omega, sc),
                         "operator": [render(c, sc) for c in q.coefficients()]})
            out.text.append(f"row {e.row}: params {', '.join(e.params)}; omega = {render(e.omega, sc)}")
        out.details = {"rows": rows}
    else:
        e = load_entry(fl["row"])
        out.details = {"row": e.row, "source": e.source}
        out.text.append(e.show().rstrip("\n"))
    return out.finish()


def cmd_compare(cfg: RunConfig) -> Outcome:
    out = Outcome("compare", cfg.seed)
    a, b = (system_from_source(load_source(n)) for n in cfg.inputs[:2])
    unknowns = tuple((cfg.flags.get("unknowns") or "xi0,xi1,eta1,eta2").split(","))
    rep = compare_systems(a, b, unknowns=unknowns)
    ok = rep.status != "mismatch"
    out.claims.append({"claim-id": f"compare:{cfg.inputs[0]}:{cfg.inputs[1]}", "status": rep.status,
                       "verdict": "agrees" if ok else "disagrees", "expected": True})
    out.details = rep.as_dict()
    out.text.append(_claim_line(out.claims[-1]))
    for x, y in rep.matched_pairs:
        out.text.append(f"  {x} <-> {y}")
    for lab in rep.unmatched_a:
        out.text.append(f"  unmatched in first: {lab}")
    for lab in rep.unmatched_b:
        out.text.append(f"  unmatched in second: {lab}")
    return out.finish()


COMMANDS = {
    "detsys": cmd_detsys,
    "verify": cmd_verify,
    "kirchhoff": cmd_kirchhoff,
    "catalog": cmd_catalog,
    "compare": cmd_compare,
}


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: $CONDSYM_SEED or 0)")
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("-o", "--output", default=None, help="write the generated file here")

    p = argparse.ArgumentParser(prog="condsym", description="Q-conditional symmetry toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detsys", parents=[common], help="generate determining equations")
    d.add_argument("input")
    d.add_argument("--type", choices=("lie", "first", "p", "nonclassical"), default="first")
    d.add_argument("--indices", default=None, help="1-based invariant surface conditions to adjoin, e.g. 1,2")
    d.add_argument("--diff-consequences", action="store_true")
    d.add_argument("--xi0-normalize", action="store_true")
    d.add_argument("--example", action="store_true", help="impose xi1 = eta1_v = eta2_u = 0")
    d.add_argument("--raw", action="store_true", help="skip autoreduction")
    d.add_argument("--allow-xi0-zero", action="store_true")
    d.add_argument("--compare", default=None, metavar="REF")

    v = sub.add_parser("verify", parents=[common], help="numeric residual checks")
    v.add_argument("inputs", nargs="*")
    v.add_argument("--catalog", type=int, default=None, metavar="ROW")
    v.add_argument("--param", action="append", default=[], metavar="NAME=VALUE")
    v.add_argument("--first-type", action="store_true")
    v.add_argument("--nonclassical", action="store_true")
    v.add_argument("--lie", action="store_true")
    v.add_argument("--p-sample", action="store_true", help="use p = 6/x^2 (needs lambda=0)")
    v.add_argument("--n-points", type=int, default=100)
    v.add_argument("--tol", type=float, default=1e-9)
    v.add_argument("--samples", type=int, default=3)

    k = sub.add_parser("kirchhoff", parents=[common], help="Kirchhoff substitution to canonical form")
    k.add_argument("inputs", nargs="*")
    k.add_argument("--catalog", type=int, default=None, metavar="ROW")
    k.add_argument("--param", action="append", default=[], metavar="NAME=VALUE")
    k.add_argument("--no-numeric", action="store_true", help="fail instead of falling back to numeric inversion")

    c = sub.add_parser("catalog", parents=[common], help="list or show the classified systems")
    csub = c.add_subparsers(dest="action", required=True)
    csub.add_parser("list", parents=[common])
    cs = csub.add_parser("show", parents=[common])
    cs.add_argument("row", type=int)

    m = sub.add_parser("compare", parents=[common], help="compare two determining-system files")
    m.add_argument("inputs", nargs=2)
    m.add_argument("--unknowns", default=None, help="comma-separated unknown function names")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    seed = ns.seed if ns.seed is not None else default_seed()
    skip = {"command", "seed", "format", "output", "tol", "n_points", "input", "inputs"}
    flags = {k: v for k, v in vars(ns).items() if k not in skip}
    inputs = [ns.input] if getattr(ns, "input", None) else list(getattr(ns, "inputs", []) or [])
    return RunConfig(ns.command, inputs, seed, getattr(ns, "tol", 1e-9), getattr(ns, "n_points", 100), ns.format, ns.output, flags)


def run(cfg: RunConfig) -> Outcome:
    try:
        return COMMANDS[cfg.command](cfg)
    except (ParseError, InputError) as exc:
        err, code = str(exc), EXIT_PARSE
    except (CatalogError, KirchhoffError, CondsymError, JetError, EvalError, KernelError, ValueError) as exc:
        err, code = str(exc), EXIT_PRECONDITION
    o = Outcome(cfg.command, cfg.seed, error=err, exit_code=code)
    o.text.append(f"error: {err}")
    return o


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    o = run(cfg)
    if cfg.fmt == "json":
        print(o.to_json())
    else:
        stream = sys.stderr if o.error else sys.stdout
        for line in o.text:
            print(line, file=stream)
        if o.claims:
            print(f"status: {o.status}")
    return o.exit_code


if __name__ == "__main__":
    sys.exit(main())
