"""Command-line entry point.

Subcommands: parse, check, project, run, fuzz, replay, consensus.
Exit codes: 0 success / all properties held, 1 property or type failure,
2 usage or parse error.  File conventions: .gt global types, .lt local
types, .proc processes, .jsonl traces.  The environment variable
FTSESSION_SEED supplies a default seed; an explicit --seed wins.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import syntax as sx
from .oracles import ORACLES, make_oracle
from .parser import ParseError, parse_global, parse_local, parse_process
from .pretty import pretty_global, pretty_local, pretty_process
from .projection import NotProjectable, project_all
from .runner import Program, read_trace, replay, run, write_trace
from .typing import (GlobalEnv, LinearityViolation, TypeRejection,
                     UnsortedName, typecheck, SessionEnv)
from .verifier import fuzz, run_verified
from .wellformed import check_global_wf, check_local_wf

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise SystemExit(_usage_error(f"cannot read {path}: {e}"))


def _usage_error(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _default_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FTSESSION_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SystemExit(_usage_error(f"FTSESSION_SEED={env!r} is not an "
                                          f"integer"))
    return 0


def _oracle_kwargs(args) -> dict:
    kwargs = {}
    if args.oracle in ("cond1", "diamond-s") and args.crash_budget is not None:
        kwargs["crash_budget"] = args.crash_budget
    if args.oracle == "diamond-s":
        kwargs["gst"] = args.gst
        if getattr(args, "n", None):
            kwargs["n"] = args.n
    return kwargs


# ---------------------------------------------------------------------------
# environment derivation for file-based commands


def derive_gamma(g, proc, declared=None) -> GlobalEnv:
    """Assemble the global environment for checking proc against g: every
    shared channel of the process is bound to g, unreliable-communication
    labels take their sorts from g, and free value names are sorted from
    declarations plus light usage inference."""
    gamma = GlobalEnv()
    for lab, sort in _collect_label_sorts(g).items():
        gamma = gamma.with_label(lab, sort)
    shared = set()

    def find_shared(q, bound):
        if isinstance(q, (sx.Request, sx.Accept)) and q.shared not in bound:
            shared.add(q.shared)
        for child, binds in sx._proc_children(q):
            find_shared(child, bound | binds)

    find_shared(proc, set())
    for name in sorted(shared):
        gamma = gamma.with_shared(name, g)

    sorts = dict(declared or {})
    for name, sort in _infer_value_sorts(proc, gamma).items():
        sorts.setdefault(name, sort)
    bound_anywhere = shared
    for name in sorted(sorts):
        if name not in bound_anywhere:
            gamma = gamma.with_value(name, sorts[name])
    return gamma


def _collect_label_sorts(g) -> dict:
    out = {}

    def walk(t):
        if isinstance(t, sx.GComU):
            prev = out.get(t.label.base)
            if prev is not None and prev != t.sort:
                raise LinearityViolation(t.label,
                                         f"label {t.label} used at sorts "
                                         f"{prev} and {t.sort}")
            out[t.label.base] = t.sort
            walk(t.cont)
        elif isinstance(t, (sx.GComR, sx.GDeleg)):
            walk(t.cont)
        elif isinstance(t, (sx.GBranR, sx.GBranW)):
            for _, gi in t.branches:
                walk(gi)
        elif isinstance(t, sx.GPar):
            walk(t.left)
            walk(t.right)
        elif isinstance(t, sx.GRec):
            walk(t.body)

    walk(g)
    return {sx.Label(base): sort for base, sort in out.items()}


def _infer_value_sorts(proc, gamma) -> dict:
    """Best-effort sorts for free value names from syntactic positions with
    a known expected sort."""
    found = {}

    def note(name, sort):
        found.setdefault(name, sort)

    def scan_expr(e, expected):
        if isinstance(e, sx.Name) and expected is not None:
            note(e.id, expected)
        elif isinstance(e, sx.BinOp):
            if e.op in ("+", "-", "*", "<=", "<", ">=", ">"):
                scan_expr(e.left, sx.NAT)
                scan_expr(e.right, sx.NAT)
            elif e.op in ("and", "or"):
                scan_expr(e.left, sx.BOOL)
                scan_expr(e.right, sx.BOOL)
            else:
                for side, other in ((e.left, e.right), (e.right, e.left)):
                    if isinstance(other, sx.Lit) and isinstance(other.value, sx.NatV):
                        scan_expr(side, sx.NAT)
                    elif isinstance(other, sx.Lit) and isinstance(other.value, sx.BoolV):
                        scan_expr(side, sx.BOOL)
        elif isinstance(e, sx.Not):
            scan_expr(e.arg, sx.BOOL)
        elif isinstance(e, sx.Roll):
            scan_expr(e.arg, sx.NAT)
        elif isinstance(e, (sx.Best, sx.Known)):
            for i in e.items:
                scan_expr(i, sx.BEL)
        elif isinstance(e, sx.CountAck):
            for i in e.items:
                scan_expr(i, sx.ACK)

    def label_sort(label):
        try:
            return gamma.label_sort(label)[1]
        except UnsortedName:
            return None

    def walk(q, bound):
        if isinstance(q, sx.SendU):
            scan_expr(q.expr, label_sort(q.label))
        elif isinstance(q, sx.GetU):
            scan_expr(q.default, label_sort(q.label))
        elif isinstance(q, sx.SendR):
            scan_expr(q.expr, None)
        elif isinstance(q, sx.If):
            scan_expr(q.cond, sx.BOOL)
        for child, binds in sx._proc_children(q):
            walk(child, bound | binds)

    walk(proc, set())
    free = sx.free_names(proc)
    return {n: s for n, s in found.items() if n in free}


def _parse_names(pairs):
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise SystemExit(_usage_error(f"--name expects x=sort, got {item!r}"))
        name, sortname = item.split("=", 1)
        sort = sx.SORTS_BY_NAME.get(sortname)
        if sort is None:
            raise SystemExit(_usage_error(f"unknown sort {sortname!r}"))
        out[name] = sort
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_parse(args) -> int:
    text = _read(args.file)
    kind = args.kind
    if kind == "auto":
        kind = {"gt": "global", "lt": "local", "proc": "process"}.get(
            args.file.rsplit(".", 1)[-1], "process")
    try:
        if kind == "global":
            term = parse_global(text)
            rendered = pretty_global(term)
            report = check_global_wf(term)
        elif kind == "local":
            term = parse_local(text)
            rendered = pretty_local(term)
            report = check_local_wf(term)
        else:
            term = parse_process(text)
            rendered = pretty_process(term)
            report = None
    except ParseError as e:
        print(f"{args.file}:{e}", file=sys.stderr)
        return EXIT_USAGE
    if args.json:
        out = {"kind": kind, "canonical": rendered}
        if report is not None:
            out["wellformed"] = report.ok
            out["violations"] = [{"path": list(v.path), "condition": v.condition,
                                  "message": v.message}
                                 for v in report.violations]
        print(json.dumps(out, indent=2))
    else:
        print(rendered)
        if report is not None:
            print(report)
    if report is not None and not report.ok:
        return EXIT_FAIL
    return EXIT_OK


def cmd_project(args) -> int:
    try:
        g = parse_global(_read(args.file))
    except ParseError as e:
        print(f"{args.file}:{e}", file=sys.stderr)
        return EXIT_USAGE
    report = check_global_wf(g)
    if not report.ok:
        print(report, file=sys.stderr)
        return EXIT_FAIL
    try:
        mapping = project_all(g)
    except NotProjectable as e:
        if args.json:
            print(json.dumps({"projectable": False, "role": e.role,
                              "cause": e.cause, "detail": str(e)}, indent=2))
        else:
            print(str(e), file=sys.stderr)
        return EXIT_FAIL
    if args.role is not None:
        mapping = {args.role: mapping[args.role]}
    if args.json:
        print(json.dumps({"projectable": True,
                          "locals": {str(r): pretty_local(l)
                                     for r, l in mapping.items()}}, indent=2))
    else:
        for r in sorted(mapping):
            print(f"{r}: {pretty_local(mapping[r])}")
    return EXIT_OK


def _load_program(args) -> Program:
    try:
        g = parse_global(_read(args.gt))
        proc = parse_process(_read(args.proc))
    except ParseError as e:
        raise SystemExit(_usage_error(str(e)))
    report = check_global_wf(g)
    if not report.ok:
        print(report, file=sys.stderr)
        raise SystemExit(EXIT_FAIL)
    gamma = derive_gamma(g, proc, _parse_names(getattr(args, "name", None)))
    name = os.path.splitext(os.path.basename(args.proc))[0]
    return Program(name, proc, gamma)


def cmd_check(args) -> int:
    prog = _load_program(args)
    try:
        typecheck(prog.gamma, prog.process, SessionEnv())
    except TypeRejection as e:
        print(f"type error: {e}", file=sys.stderr)
        return EXIT_FAIL
    except (UnsortedName, LinearityViolation) as e:
        print(f"environment error: {e} "
              f"(declare free names with --name x=sort)", file=sys.stderr)
        return EXIT_USAGE
    print("well-typed")
    return EXIT_OK


def cmd_run(args) -> int:
    prog = _load_program(args)
    seed = _default_seed(args)
    oracle = make_oracle(args.oracle, seed=seed, **_oracle_kwargs(args))
    if args.no_verify:
        result = run(prog, oracle, seed, args.steps, args.policy)
        verdicts = []
        rules = sorted(result.trace.rules_used())
    else:
        vr = run_verified(prog, oracle, seed, args.steps, args.policy)
        result = vr.result
        verdicts = vr.verdicts
        rules = sorted(vr.rules_seen)
    if args.trace:
        write_trace(result.trace, args.trace)
    if args.json:
        print(json.dumps({
            "seed": seed, "steps": len(result.trace.events),
            "terminal": result.terminal, "rules": rules,
            "verdicts": [{"property": v.prop, "passed": v.passed,
                          "status": v.status, "step": v.step,
                          "detail": v.detail} for v in verdicts],
        }, indent=2))
    else:
        print(f"{len(result.trace.events)} steps "
              f"({'terminal' if result.terminal else 'step cap reached'}); "
              f"rules: {', '.join(rules)}")
        for v in verdicts:
            print(" ", v)
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_FAIL


def cmd_fuzz(args) -> int:
    prog = _load_program(args)
    base = _default_seed(args)
    seeds = [base + i for i in range(args.seeds)]
    kwargs = _oracle_kwargs(args)
    report = fuzz(prog, lambda s: make_oracle(args.oracle, seed=s, **kwargs),
                  seeds, args.steps, args.policy)
    if args.json:
        print(json.dumps({
            "program": report.program, "seeds": report.seeds,
            "total_steps": report.total_steps, "ok": report.ok,
            "terminal_seeds": report.terminal_seeds,
            "coverage": report.coverage(),
            "failures": [{"property": v.prop, "step": v.step,
                          "detail": v.detail} for v in report.verdicts],
        }, indent=2))
    else:
        print(report.summary())
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_replay(args) -> int:
    prog = _load_program(args)
    trace = read_trace(args.trace)
    rep = replay(prog, trace)
    if rep.ok:
        print(f"replay ok: {len(trace.events)} events reproduced")
        return EXIT_OK
    print(f"replay failed: {rep.message}", file=sys.stderr)
    return EXIT_FAIL


def cmd_consensus(args) -> int:
    from .consensus import rc_program, sweep_consensus
    beliefs = {}
    try:
        values = [int(x) for x in args.beliefs.split(",")]
    except ValueError:
        return _usage_error(f"--beliefs expects comma-separated 0/1, got "
                            f"{args.beliefs!r}")
    if len(values) != args.n or any(v not in (0, 1) for v in values):
        return _usage_error(f"--beliefs needs {args.n} values of 0/1")
    beliefs = {i + 1: v for i, v in enumerate(values)}
    base = _default_seed(args)
    seeds = [base + i for i in range(args.seeds)]
    if args.oracle != "diamond-s":
        return _usage_error("the consensus command runs under the diamond-s "
                            "oracle")
    verdicts, agg = sweep_consensus(args.n, beliefs, seeds, gst=args.gst,
                                    crash_budget=args.crash_budget,
                                    max_steps=args.steps)
    if args.json:
        print(json.dumps({
            "n": args.n, "beliefs": values, "gst": args.gst,
            "aggregate": agg,
            "runs": {str(s): {"termination": v.termination,
                              "agreement": v.agreement,
                              "validity": v.validity,
                              "decisions": {str(r): d for r, d in
                                            v.decisions.items()},
                              "correct": sorted(v.correct_set)}
                     for s, v in verdicts.items()},
        }, indent=2))
    else:
        if args.verbose:
            for s, v in verdicts.items():
                print(f"seed {s}: {v}")
        print(f"n={args.n} runs={agg['runs']} "
              f"termination={agg['termination']} agreement={agg['agreement']} "
              f"validity={agg['validity']} all={agg['all']}")
    return EXIT_OK if agg["all"] == agg["runs"] else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ftsession",
        description="fault-tolerant multiparty session types: parse, "
                    "project, check, execute, and verify protocols")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a type or process and print its "
                                     "canonical form")
    p.add_argument("file")
    p.add_argument("--kind", choices=["auto", "global", "local", "process"],
                   default="auto")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("project", help="project a global type to per-role "
                                       "local types")
    p.add_argument("file")
    p.add_argument("--role", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_project)

    def with_program(p):
        p.add_argument("gt", help="global type file (.gt)")
        p.add_argument("proc", help="process file (.proc)")
        p.add_argument("--name", action="append", metavar="x=sort",
                       help="declare the sort of a free value name")

    def with_oracle(p):
        p.add_argument("--oracle", choices=sorted(ORACLES), default="reliable")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--crash-budget", type=int, default=None)
        p.add_argument("--gst", type=int, default=200)
        p.add_argument("--policy", choices=["random", "round-robin"],
                       default="random")

    p = sub.add_parser("check", help="typecheck a process against a global "
                                     "type")
    with_program(p)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("run", help="execute one seeded run with property "
                                   "checks")
    with_program(p)
    with_oracle(p)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--trace", help="write the trace to this .jsonl file")
    p.add_argument("--no-verify", action="store_true",
                   help="skip the per-step property checks")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("fuzz", help="property-checked seed sweep")
    with_program(p)
    with_oracle(p)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_fuzz)

    p = sub.add_parser("replay", help="re-execute a trace and compare "
                                      "digests")
    p.add_argument("trace", help="trace file (.jsonl)")
    p.add_argument("gt")
    p.add_argument("proc")
    p.add_argument("--name", action="append", metavar="x=sort")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("consensus", help="rotating-coordinator runs under "
                                         "the diamond-s oracle")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--beliefs", default="0,1,1")
    p.add_argument("--oracle", default="diamond-s")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--gst", type=int, default=200)
    p.add_argument("--crash-budget", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_consensus)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
