"""Canonical DSL rendering of types, processes, messages, and expressions.

The emitted text is re-parseable: parse(pretty(t)) yields a term structurally
equal to t.
"""

from __future__ import annotations

from . import syntax as sx

_PREC = {"or": 1, "and": 2, "==": 4, "!=": 4, "<=": 4, "<": 4, ">=": 4, ">": 4,
         "+": 5, "-": 5, "*": 6}


def pretty_value(v) -> str:
    return str(v)


def pretty_expr(e, parent_prec: int = 0, no_gt: bool = False) -> str:
    """Render an expression.  With no_gt, comparisons spelled > / >= are
    parenthesized so the result can sit inside <...> payload brackets."""
    if isinstance(e, sx.Lit):
        return pretty_value(e.value)
    if isinstance(e, sx.Name):
        return e.id
    if isinstance(e, sx.Roll):
        return f"roll({pretty_expr(e.arg)})"
    if isinstance(e, sx.Best):
        return "best(" + ", ".join(pretty_expr(i) for i in e.items) + ")"
    if isinstance(e, sx.CountAck):
        return "count_ack(" + ", ".join(pretty_expr(i) for i in e.items) + ")"
    if isinstance(e, sx.Known):
        return "known(" + ", ".join(pretty_expr(i) for i in e.items) + ")"
    if isinstance(e, sx.Not):
        inner = pretty_expr(e.arg, 3, no_gt)
        return f"not {inner}"
    if isinstance(e, sx.BinOp):
        prec = _PREC[e.op]
        if no_gt and e.op in (">", ">="):
            return "(" + pretty_expr(e, 0, False) + ")"
        left = pretty_expr(e.left, prec, no_gt)
        right = pretty_expr(e.right, prec + 1, no_gt)
        s = f"{left} {e.op} {right}"
        return f"({s})" if prec < parent_prec else s
    raise TypeError(f"not an expression: {e!r}")


def _payload(e) -> str:
    return pretty_expr(e, 0, no_gt=True)


def _roleset(rs) -> str:
    return "{" + ",".join(str(r) for r in rs) + "}"


def _gbranches(branches, default=None) -> str:
    parts = []
    for lab, g in branches:
        mark = "default " if default is not None and lab == default else ""
        parts.append(f"{mark}{lab}: {pretty_global(g)}")
    return "{ " + ", ".join(parts) + " }"


def pretty_global(g) -> str:
    if isinstance(g, sx.GComR):
        return f"{g.src} ->r {g.dst} : <{g.sort}> . {pretty_global(g.cont)}"
    if isinstance(g, sx.GComU):
        return f"{g.src} ->u {g.dst} : {g.label}<{g.sort}> . {pretty_global(g.cont)}"
    if isinstance(g, sx.GBranR):
        return f"{g.src} ->r {g.dst} : {_gbranches(g.branches)}"
    if isinstance(g, sx.GBranW):
        return f"{g.src} ->w {_roleset(g.receivers)} : {_gbranches(g.branches, g.default)}"
    if isinstance(g, sx.GPar):
        return f"({pretty_global(g.left)} | {pretty_global(g.right)})"
    if isinstance(g, sx.GRec):
        return f"rec {g.var} . {pretty_global(g.body)}"
    if isinstance(g, sx.GVar):
        return g.var
    if isinstance(g, sx.GEnd):
        return "end"
    if isinstance(g, sx.GDeleg):
        return (f"{g.src} ->r {g.dst} : <<{g.chan}@{g.role} : "
                f"{pretty_local(g.ltype)}>> . {pretty_global(g.cont)}")
    raise TypeError(f"not a global type: {g!r}")


def _lbranches(branches, default=None) -> str:
    parts = []
    for lab, l in branches:
        mark = "default " if default is not None and lab == default else ""
        parts.append(f"{mark}{lab}: {pretty_local(l)}")
    return "{ " + ", ".join(parts) + " }"


def pretty_local(l) -> str:
    if isinstance(l, sx.LSendR):
        return f"[{l.peer}]!r<{l.sort}>. {pretty_local(l.cont)}"
    if isinstance(l, sx.LGetR):
        return f"[{l.peer}]?r<{l.sort}>. {pretty_local(l.cont)}"
    if isinstance(l, sx.LSendU):
        return f"[{l.peer}]!u {l.label}<{l.sort}>. {pretty_local(l.cont)}"
    if isinstance(l, sx.LGetU):
        return f"[{l.peer}]?u {l.label}<{l.sort}>. {pretty_local(l.cont)}"
    if isinstance(l, sx.LSelR):
        return f"[{l.peer}]!r{_lbranches(l.branches)}"
    if isinstance(l, sx.LBranR):
        return f"[{l.peer}]?r{_lbranches(l.branches)}"
    if isinstance(l, sx.LSelW):
        return f"[{_roleset(l.receivers)}]!w{_lbranches(l.branches)}"
    if isinstance(l, sx.LBranW):
        return f"[{l.peer}]?w{_lbranches(l.branches, l.default)}"
    if isinstance(l, sx.LDelegOut):
        return (f"[{l.peer}]!<<{l.chan}@{l.role} : {pretty_local(l.carried)}>>. "
                f"{pretty_local(l.cont)}")
    if isinstance(l, sx.LDelegIn):
        return (f"[{l.peer}]?<<{l.chan}@{l.role} : {pretty_local(l.carried)}>>. "
                f"{pretty_local(l.cont)}")
    if isinstance(l, sx.LRec):
        return f"rec {l.var} . {pretty_local(l.body)}"
    if isinstance(l, sx.LVar):
        return l.var
    if isinstance(l, sx.LEnd):
        return "end"
    raise TypeError(f"not a local type: {l!r}")


def pretty_message(m) -> str:
    if isinstance(m, sx.MsgR):
        return f"r<{pretty_value(m.value)}>"
    if isinstance(m, sx.MsgU):
        return f"u {m.label}<{pretty_value(m.value)}>"
    if isinstance(m, sx.MsgBranR):
        return f"br {m.label}"
    if isinstance(m, sx.MsgBranW):
        return f"bw {m.label}"
    if isinstance(m, sx.MsgDeleg):
        return f"dg {m.chan}@{m.role}"
    raise TypeError(f"not a message: {m!r}")


def _cont(p) -> str:
    # parenthesize continuations that would otherwise swallow the tail
    s = pretty_process(p)
    if isinstance(p, (sx.Par, sx.If)):
        return f"({s})"
    return s


def _pbranches(branches, default=None) -> str:
    parts = []
    for lab, pi in branches:
        mark = "default " if default is not None and lab == default else ""
        parts.append(f"{mark}{lab}: {pretty_process(pi)}")
    return "{ " + ", ".join(parts) + " }"


def pretty_process(p) -> str:
    if isinstance(p, sx.Request):
        return f"req {p.shared}[{p.n}]({p.session}). {_cont(p.body)}"
    if isinstance(p, sx.Accept):
        return f"acc {p.shared}[{p.role}]({p.session}). {_cont(p.body)}"
    if isinstance(p, sx.SendR):
        return f"{p.session}[{p.role},{p.peer}]!<{_payload(p.expr)}>. {_cont(p.cont)}"
    if isinstance(p, sx.GetR):
        return f"{p.session}[{p.role},{p.peer}]?({p.binder}). {_cont(p.cont)}"
    if isinstance(p, sx.SendU):
        return (f"{p.session}[{p.role},{p.peer}]!u {p.label}<{_payload(p.expr)}>. "
                f"{_cont(p.cont)}")
    if isinstance(p, sx.GetU):
        return (f"{p.session}[{p.role},{p.peer}]?u {p.label}"
                f"({pretty_expr(p.default)} -> {p.binder}). {_cont(p.cont)}")
    if isinstance(p, sx.SelR):
        return f"{p.session}[{p.role},{p.peer}]!r {p.label}. {_cont(p.cont)}"
    if isinstance(p, sx.BranR):
        return f"{p.session}[{p.role},{p.peer}]?r{_pbranches(p.branches)}"
    if isinstance(p, sx.SelW):
        return (f"{p.session}[{p.role},{_roleset(p.receivers)}]!w {p.label}. "
                f"{_cont(p.cont)}")
    if isinstance(p, sx.BranW):
        return f"{p.session}[{p.role},{p.peer}]?w{_pbranches(p.branches, p.default)}"
    if isinstance(p, sx.Par):
        return f"({pretty_process(p.left)} | {pretty_process(p.right)})"
    if isinstance(p, sx.Rec):
        return f"mu {p.var} . {pretty_process(p.body)}"
    if isinstance(p, sx.PVar):
        return p.var
    if isinstance(p, sx.End):
        return "0"
    if isinstance(p, sx.Crash):
        return "crash"
    if isinstance(p, sx.If):
        return (f"if {pretty_expr(p.cond)} then ({pretty_process(p.then)}) "
                f"else ({pretty_process(p.els)})")
    if isinstance(p, sx.Restrict):
        return f"new {p.name} . {_cont(p.body)}"
    if isinstance(p, sx.DelegOut):
        return f"{p.session}[{p.role},{p.peer}]!<<{p.chan}@{p.crole}>>. {_cont(p.cont)}"
    if isinstance(p, sx.DelegIn):
        return f"{p.session}[{p.role},{p.peer}]?(({p.chan}@{p.crole})). {_cont(p.cont)}"
    if isinstance(p, sx.Queue):
        items = ", ".join(pretty_message(m) for m in p.items)
        return f"queue {p.session}:{p.src}->{p.dst} [{items}]"
    raise TypeError(f"not a process: {p!r}")
