"""Core ASTs for the fault-tolerant session calculus.

Three term languages share this module: global types (bird's-eye protocol),
local types (one role's view), and processes (the implementation calculus
with message queues and a crash term).  Everything here is an immutable
value; all operations are pure.

Interaction kinds follow one convention throughout:

* ``r``  strongly reliable: neither endpoint crashes, no message loss;
* ``u``  unreliable: endpoints may crash and the medium may drop messages,
  so receivers carry a default value and payloads carry a label;
* ``w``  weakly reliable branching: endpoints may crash but branch labels
  are never lost; receivers carry a default branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterable, Mapping, Optional, Union

# ---------------------------------------------------------------------------
# labels, sorts, values


@dataclass(frozen=True)
class Label:
    """Branch/message label: an identifier plus optional runtime metadata.

    The metadata (e.g. a timestamp) never participates in comparisons;
    see labels_compatible.
    """

    base: str
    meta: Optional[int] = None

    def __post_init__(self):
        if not self.base:
            raise ValueError("label base must be non-empty")

    def __str__(self):
        return self.base if self.meta is None else f"{self.base}@{self.meta}"


def labels_compatible(a: Label, b: Label) -> bool:
    """Default label comparison: bases must agree, metadata is ignored.

    This instantiation is an equivalence relation, so the unambiguity law
    (l1 ~ l2 and l1 ~ lT imply l2 ~ lT) holds for free.
    """
    return a.base == b.base


def label_key(label: Label):
    """Canonical ordering key for branch maps."""
    return (label.base, -1 if label.meta is None else label.meta)


@dataclass(frozen=True)
class Sort:
    tag: str  # "nat" | "bool" | "bel" | "ack"

    def __str__(self):
        return self.tag


NAT = Sort("nat")
BOOL = Sort("bool")
BEL = Sort("bel")
ACK = Sort("ack")

SORTS_BY_NAME = {"nat": NAT, "bool": BOOL, "bel": BEL, "ack": ACK}


@dataclass(frozen=True)
class NatV:
    n: int

    def __str__(self):
        return str(self.n)


@dataclass(frozen=True)
class BoolV:
    b: bool

    def __str__(self):
        return "true" if self.b else "false"


@dataclass(frozen=True)
class BotV:
    """The absent-knowledge marker, admitted by the bel and ack sorts."""

    def __str__(self):
        return "bot"


BOT = BotV()

Value = Union[NatV, BoolV, BotV]


def value_has_sort(v: Value, s: Sort) -> bool:
    if s is NAT or s.tag == "nat":
        return isinstance(v, NatV) and v.n >= 0
    if s.tag == "bool":
        return isinstance(v, BoolV)
    if s.tag == "bel":
        return isinstance(v, BotV) or (isinstance(v, NatV) and v.n in (0, 1))
    if s.tag == "ack":
        return isinstance(v, (BoolV, BotV))
    raise ValueError(f"unknown sort {s}")


# ---------------------------------------------------------------------------
# expressions
#
# Expressions are built from boolean/natural constants and operators, name
# references, comparisons, and a few knowledge-vector primitives used by the
# consensus processes (best / count_ack / known over entry lists).
# Evaluation of a closed expression is total and deterministic.


@dataclass(frozen=True)
class Lit:
    value: Value


@dataclass(frozen=True)
class Name:
    id: str


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * == != <= < >= > and or
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    arg: "Expr"


@dataclass(frozen=True)
class Roll:
    """Pure pseudo-die: adds a value-derived face in 1..6 to the argument."""

    arg: "Expr"


@dataclass(frozen=True)
class Best:
    """Least non-bot entry of a knowledge vector (errors if all bot)."""

    items: tuple


@dataclass(frozen=True)
class CountAck:
    """Number of true entries of an acknowledgement vector."""

    items: tuple


@dataclass(frozen=True)
class Known:
    """Number of non-bot entries of a knowledge vector."""

    items: tuple


Expr = Union[Lit, Name, BinOp, Not, Roll, Best, CountAck, Known]

TRUE = Lit(BoolV(True))
FALSE = Lit(BoolV(False))


def nat(n: int) -> Lit:
    return Lit(NatV(n))


def expr_names(e: Expr) -> frozenset:
    if isinstance(e, Lit):
        return frozenset()
    if isinstance(e, Name):
        return frozenset((e.id,))
    if isinstance(e, BinOp):
        return expr_names(e.left) | expr_names(e.right)
    if isinstance(e, (Not, Roll)):
        return expr_names(e.arg)
    if isinstance(e, (Best, CountAck, Known)):
        out = frozenset()
        for item in e.items:
            out |= expr_names(item)
        return out
    raise TypeError(f"not an expression: {e!r}")


def expr_substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    if isinstance(e, Lit):
        return e
    if isinstance(e, Name):
        return mapping.get(e.id, e)
    if isinstance(e, BinOp):
        return BinOp(e.op, expr_substitute(e.left, mapping), expr_substitute(e.right, mapping))
    if isinstance(e, Not):
        return Not(expr_substitute(e.arg, mapping))
    if isinstance(e, Roll):
        return Roll(expr_substitute(e.arg, mapping))
    if isinstance(e, (Best, CountAck, Known)):
        return type(e)(tuple(expr_substitute(i, mapping) for i in e.items))
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# global types


def _branches(pairs) -> tuple:
    """Normalize a branch map to a tuple of (Label, term) pairs in canonical
    label order.  Distinctness is a well-formedness condition, not enforced
    here."""
    if isinstance(pairs, Mapping):
        pairs = pairs.items()
    out = []
    for lab, term in pairs:
        if isinstance(lab, str):
            lab = Label(lab)
        out.append((lab, term))
    out.sort(key=lambda p: label_key(p[0]))
    return tuple(out)


@dataclass(frozen=True)
class GComR:
    src: int
    dst: int
    sort: Sort
    cont: "GlobalType"


@dataclass(frozen=True)
class GComU:
    src: int
    dst: int
    label: Label
    sort: Sort
    cont: "GlobalType"


@dataclass(frozen=True)
class GBranR:
    src: int
    dst: int
    branches: tuple  # ((Label, GlobalType), ...)

    def __post_init__(self):
        object.__setattr__(self, "branches", _branches(self.branches))


@dataclass(frozen=True)
class GBranW:
    src: int
    receivers: tuple  # sorted role tuple
    branches: tuple
    default: Label

    def __post_init__(self):
        object.__setattr__(self, "receivers", tuple(sorted(self.receivers)))
        object.__setattr__(self, "branches", _branches(self.branches))
        if isinstance(self.default, str):
            object.__setattr__(self, "default", Label(self.default))


@dataclass(frozen=True)
class GPar:
    left: "GlobalType"
    right: "GlobalType"


@dataclass(frozen=True)
class GRec:
    var: str
    body: "GlobalType"


@dataclass(frozen=True)
class GVar:
    var: str


@dataclass(frozen=True)
class GEnd:
    pass


@dataclass(frozen=True)
class GDeleg:
    src: int
    dst: int
    chan: str
    role: int
    ltype: "LocalType"
    cont: "GlobalType"


GlobalType = Union[GComR, GComU, GBranR, GBranW, GPar, GRec, GVar, GEnd, GDeleg]

G_END = GEnd()


# ---------------------------------------------------------------------------
# local types


@dataclass(frozen=True)
class LSendR:
    peer: int
    sort: Sort
    cont: "LocalType"


@dataclass(frozen=True)
class LGetR:
    peer: int
    sort: Sort
    cont: "LocalType"


@dataclass(frozen=True)
class LSendU:
    peer: int
    label: Label
    sort: Sort
    cont: "LocalType"


@dataclass(frozen=True)
class LGetU:
    peer: int
    label: Label
    sort: Sort
    cont: "LocalType"


@dataclass(frozen=True)
class LSelR:
    peer: int
    branches: tuple

    def __post_init__(self):
        object.__setattr__(self, "branches", _branches(self.branches))


@dataclass(frozen=True)
class LBranR:
    peer: int
    branches: tuple

    def __post_init__(self):
        object.__setattr__(self, "branches", _branches(self.branches))


@dataclass(frozen=True)
class LSelW:
    receivers: tuple
    branches: tuple

    def __post_init__(self):
        object.__setattr__(self, "receivers", tuple(sorted(self.receivers)))
        object.__setattr__(self, "branches", _branches(self.branches))


@dataclass(frozen=True)
class LBranW:
    peer: int
    branches: tuple
    default: Label

    def __post_init__(self):
        object.__setattr__(self, "branches", _branches(self.branches))
        if isinstance(self.default, str):
            object.__setattr__(self, "default", Label(self.default))


@dataclass(frozen=True)
class LDelegOut:
    peer: int
    chan: str
    role: int
    carried: "LocalType"
    cont: "LocalType"


@dataclass(frozen=True)
class LDelegIn:
    peer: int
    chan: str
    role: int
    carried: "LocalType"
    cont: "LocalType"


@dataclass(frozen=True)
class LRec:
    var: str
    body: "LocalType"


@dataclass(frozen=True)
class LVar:
    var: str


@dataclass(frozen=True)
class LEnd:
    pass


LocalType = Union[
    LSendR, LGetR, LSendU, LGetU, LSelR, LBranR, LSelW, LBranW,
    LDelegOut, LDelegIn, LRec, LVar, LEnd,
]

L_END = LEnd()


# ---------------------------------------------------------------------------
# messages


@dataclass(frozen=True)
class MsgR:
    value: Value


@dataclass(frozen=True)
class MsgU:
    label: Label
    value: Value


@dataclass(frozen=True)
class MsgBranR:
    label: Label


@dataclass(frozen=True)
class MsgBranW:
    label: Label


@dataclass(frozen=True)
class MsgDeleg:
    chan: str
    role: int


Message = Union[MsgR, MsgU, MsgBranR, MsgBranW, MsgDeleg]


# ---------------------------------------------------------------------------
# processes
#
# Roles in process position are ints; the delegation receiver binds a role
# variable, so role slots reachable from a DelegIn continuation may hold a
# str until the delegation message instantiates them.

Role = Union[int, str]


@dataclass(frozen=True)
class Request:
    """Session request ``req a[n](s).P``: initiates a session with n roles
    over shared channel a, playing the highest role n.  Binds s in P."""

    shared: str
    n: int
    session: str
    body: "Process"


@dataclass(frozen=True)
class Accept:
    """Session accept ``acc a[r](s).P`` for one of the roles 1..n-1."""

    shared: str
    role: int
    session: str
    body: "Process"


@dataclass(frozen=True)
class SendR:
    session: str
    role: Role
    peer: Role
    expr: Expr
    cont: "Process"


@dataclass(frozen=True)
class GetR:
    session: str
    role: Role
    peer: Role
    binder: str
    cont: "Process"


@dataclass(frozen=True)
class SendU:
    session: str
    role: Role
    peer: Role
    label: Label
    expr: Expr
    cont: "Process"


@dataclass(frozen=True)
class GetU:
    """Unreliable reception: on failure the default expression is used in
    place of a received value to instantiate the binder."""

    session: str
    role: Role
    peer: Role
    label: Label
    default: Expr
    binder: str
    cont: "Process"


@dataclass(frozen=True)
class SelR:
    session: str
    role: Role
    peer: Role
    label: Label
    cont: "Process"


@dataclass(frozen=True)
class BranR:
    session: str
    role: Role
    peer: Role
    branches: tuple

    def __post_init__(self):
        object.__setattr__(self, "branches", _branches(self.branches))


@dataclass(frozen=True)
class SelW:
    """Weakly reliable broadcast selection toward a set of receivers."""

    session: str
    role: Role
    receivers: tuple
    label: Label
    cont: "Process"

    def __post_init__(self):
        object.__setattr__(self, "receivers", tuple(sorted(self.receivers)))


@dataclass(frozen=True)
class BranW:
    session: str
    role: Role
    peer: Role
    branches: tuple
    default: Label

    def __post_init__(self):
        object.__setattr__(self, "branches", _branches(self.branches))
        if isinstance(self.default, str):
            object.__setattr__(self, "default", Label(self.default))


@dataclass(frozen=True)
class Par:
    left: "Process"
    right: "Process"


@dataclass(frozen=True)
class Rec:
    var: str
    body: "Process"


@dataclass(frozen=True)
class PVar:
    var: str


@dataclass(frozen=True)
class End:
    pass


@dataclass(frozen=True)
class Crash:
    """The crashed process; owns no actors and never acts again."""


@dataclass(frozen=True)
class If:
    cond: Expr
    then: "Process"
    els: "Process"


@dataclass(frozen=True)
class Restrict:
    name: str
    body: "Process"


@dataclass(frozen=True)
class DelegOut:
    session: str
    role: Role
    peer: Role
    chan: str
    crole: Role
    cont: "Process"


@dataclass(frozen=True)
class DelegIn:
    """Delegation reception ``s[r1,r2]?((c@r)).P``: binds the channel name c
    and the role variable r in P."""

    session: str
    role: Role
    peer: Role
    chan: str
    crole: str
    cont: "Process"


@dataclass(frozen=True)
class Queue:
    """Directed FIFO message queue of a session; machine-generated state."""

    session: str
    src: Role
    dst: Role
    items: tuple  # (Message, ...)

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))


Process = Union[
    Request, Accept, SendR, GetR, SendU, GetU, SelR, BranR, SelW, BranW,
    Par, Rec, PVar, End, Crash, If, Restrict, DelegOut, DelegIn, Queue,
]

P_END = End()
P_CRASH = Crash()


@dataclass(frozen=True, order=True)
class Actor:
    """A session channel paired with a role: the linear unit of
    participation."""

    session: str
    role: int

    def __str__(self):
        return f"{self.session}[{self.role}]"


# ---------------------------------------------------------------------------
# cached per-node structure
#
# Process terms are immutable and heavily shared between reduction steps, so
# the syntactic facts every hot path needs (free names, free process
# variables, free actors, reliability, a structural key) are computed once
# per node object and memoized by identity.  Substitution uses the free-name
# sets to return untouched subtrees unchanged, which keeps a reduction step
# proportional to the rewritten spine rather than the whole term.

import hashlib as _hashlib


@dataclass(frozen=True)
class _NodeInfo:
    free: frozenset      # free names (values, shared and session channels)
    pvars: frozenset     # free process variables
    actors: frozenset    # actors on free sessions, at any depth
    unrel: bool          # no reliable/delegation prefix, no queue
    prefixes: bool       # contains an action prefix
    skey: bytes          # structural key (alpha-sensitive)


_INFO_CACHE: dict = {}
_INFO_CACHE_MAX = 500_000


def _h(*parts) -> bytes:
    h = _hashlib.blake2b(digest_size=16)
    for p in parts:
        if isinstance(p, bytes):
            h.update(p)
        else:
            h.update(str(p).encode())
        h.update(b"\x1f")
    return h.digest()


def _drop_session(actors, name):
    if any(a.session == name for a in actors):
        return frozenset(a for a in actors if a.session != name)
    return actors


def node_info(p: Process) -> _NodeInfo:
    key = id(p)
    hit = _INFO_CACHE.get(key)
    if hit is not None and hit[0] is p:
        return hit[1]
    info = _compute_info(p)
    if len(_INFO_CACHE) >= _INFO_CACHE_MAX:
        _INFO_CACHE.clear()
    _INFO_CACHE[key] = (p, info)
    return info


def _expr_key(e) -> bytes:
    return _h("expr", repr(e))


def _compute_info(p: Process) -> _NodeInfo:
    new = frozenset()
    if isinstance(p, End):
        return _NodeInfo(new, new, new, True, False, _h("end"))
    if isinstance(p, Crash):
        return _NodeInfo(new, new, new, True, False, _h("crash"))
    if isinstance(p, PVar):
        return _NodeInfo(new, frozenset((p.var,)), new, True, False,
                         _h("pvar", p.var))
    if isinstance(p, (Request, Accept)):
        b = node_info(p.body)
        rn = p.n if isinstance(p, Request) else p.role
        tag = "req" if isinstance(p, Request) else "acc"
        return _NodeInfo(frozenset((p.shared,)) | (b.free - {p.session}),
                         b.pvars, _drop_session(b.actors, p.session),
                         False, True, _h(tag, p.shared, rn, p.session, b.skey))
    if isinstance(p, SendR):
        c = node_info(p.cont)
        own = frozenset((Actor(p.session, p.role),)) if isinstance(p.role, int) \
            else frozenset()
        return _NodeInfo(frozenset((p.session,)) | expr_names(p.expr) | c.free,
                         c.pvars, own | c.actors, False, True,
                         _h("sendr", p.session, p.role, p.peer,
                            _expr_key(p.expr), c.skey))
    if isinstance(p, GetR):
        c = node_info(p.cont)
        own = frozenset((Actor(p.session, p.role),)) if isinstance(p.role, int) \
            else frozenset()
        return _NodeInfo(frozenset((p.session,)) | (c.free - {p.binder}),
                         c.pvars, own | _drop_session(c.actors, p.binder),
                         False, True,
                         _h("getr", p.session, p.role, p.peer, p.binder, c.skey))
    if isinstance(p, SendU):
        c = node_info(p.cont)
        own = frozenset((Actor(p.session, p.role),)) if isinstance(p.role, int) \
            else frozenset()
        return _NodeInfo(frozenset((p.session,)) | expr_names(p.expr) | c.free,
                         c.pvars, own | c.actors, c.unrel, True,
                         _h("sendu", p.session, p.role, p.peer, p.label,
                            _expr_key(p.expr), c.skey))
    if isinstance(p, GetU):
        c = node_info(p.cont)
        own = frozenset((Actor(p.session, p.role),)) if isinstance(p.role, int) \
            else frozenset()
        return _NodeInfo(frozenset((p.session,)) | expr_names(p.default)
                         | (c.free - {p.binder}),
                         c.pvars, own | _drop_session(c.actors, p.binder),
                         c.unrel, True,
                         _h("getu", p.session, p.role, p.peer, p.label,
                            _expr_key(p.default), p.binder, c.skey))
    if isinstance(p, SelR):
        c = node_info(p.cont)
        own = frozenset((Actor(p.session, p.role),)) if isinstance(p.role, int) \
            else frozenset()
        return _NodeInfo(frozenset((p.session,)) | c.free, c.pvars,
                         own | c.actors, False, True,
                         _h("selr", p.session, p.role, p.peer, p.label, c.skey))
    if isinstance(p, (BranR, BranW)):
        infos = [node_info(pi) for _, pi in p.branches]
        free = frozenset((p.session,))
        pvars = frozenset()
        actors = frozenset((Actor(p.session, p.role),)) if isinstance(p.role, int) \
            else frozenset()
        unrel = isinstance(p, BranW)
        parts = ["branw" if isinstance(p, BranW) else "branr",
                 p.session, p.role, p.peer,
                 p.default if isinstance(p, BranW) else ""]
        for (lab, _), i in zip(p.branches, infos):
            free |= i.free
            pvars |= i.pvars
            actors |= i.actors
            unrel = unrel and i.unrel
            parts += [lab, i.skey]
        if isinstance(p, BranR):
            unrel = False
        return _NodeInfo(free, pvars, actors, unrel, True, _h(*parts))
    if isinstance(p, SelW):
        c = node_info(p.cont)
        own = frozenset((Actor(p.session, p.role),)) if isinstance(p.role, int) \
            else frozenset()
        return _NodeInfo(frozenset((p.session,)) | c.free, c.pvars,
                         own | c.actors, c.unrel, True,
                         _h("selw", p.session, p.role, p.receivers, p.label,
                            c.skey))
    if isinstance(p, Par):
        l, r = node_info(p.left), node_info(p.right)
        return _NodeInfo(l.free | r.free, l.pvars | r.pvars,
                         l.actors | r.actors, l.unrel and r.unrel,
                         l.prefixes or r.prefixes,
                         _h("par", l.skey, r.skey))
    if isinstance(p, Rec):
        b = node_info(p.body)
        return _NodeInfo(b.free, b.pvars - {p.var}, b.actors, b.unrel,
                         b.prefixes, _h("rec", p.var, b.skey))
    if isinstance(p, If):
        t, e = node_info(p.then), node_info(p.els)
        return _NodeInfo(expr_names(p.cond) | t.free | e.free,
                         t.pvars | e.pvars, t.actors | e.actors,
                         t.unrel and e.unrel, t.prefixes or e.prefixes,
                         _h("if", _expr_key(p.cond), t.skey, e.skey))
    if isinstance(p, Restrict):
        b = node_info(p.body)
        return _NodeInfo(b.free - {p.name}, b.pvars,
                         _drop_session(b.actors, p.name), b.unrel, b.prefixes,
                         _h("new", p.name, b.skey))
    if isinstance(p, DelegOut):
        c = node_info(p.cont)
        own = frozenset((Actor(p.session, p.role),)) if isinstance(p.role, int) \
            else frozenset()
        return _NodeInfo(frozenset((p.session, p.chan)) | c.free, c.pvars,
                         own | c.actors, False, True,
                         _h("dout", p.session, p.role, p.peer, p.chan,
                            p.crole, c.skey))
    if isinstance(p, DelegIn):
        c = node_info(p.cont)
        own = frozenset((Actor(p.session, p.role),)) if isinstance(p.role, int) \
            else frozenset()
        return _NodeInfo(frozenset((p.session,)) | (c.free - {p.chan}),
                         c.pvars, own | _drop_session(c.actors, p.chan),
                         False, True,
                         _h("din", p.session, p.role, p.peer, p.chan, p.crole,
                            c.skey))
    if isinstance(p, Queue):
        free = {p.session}
        parts = ["queue", p.session, p.src, p.dst]
        for m in p.items:
            if isinstance(m, MsgDeleg):
                free.add(m.chan)
            parts.append(repr(m))
        return _NodeInfo(frozenset(free), frozenset(), frozenset(), False,
                         False, _h(*parts))
    raise TypeError(f"not a process: {p!r}")


def struct_key(p: Process) -> bytes:
    return node_info(p).skey


# ---------------------------------------------------------------------------
# syntactic queries


def roles_of(g: GlobalType) -> frozenset:
    """All roles occurring syntactically in a global type."""
    if isinstance(g, (GComR, GComU)):
        return frozenset((g.src, g.dst)) | roles_of(g.cont)
    if isinstance(g, GBranR):
        out = frozenset((g.src, g.dst))
        for _, gi in g.branches:
            out |= roles_of(gi)
        return out
    if isinstance(g, GBranW):
        out = frozenset((g.src,)) | frozenset(g.receivers)
        for _, gi in g.branches:
            out |= roles_of(gi)
        return out
    if isinstance(g, GPar):
        return roles_of(g.left) | roles_of(g.right)
    if isinstance(g, GRec):
        return roles_of(g.body)
    if isinstance(g, (GVar, GEnd)):
        return frozenset()
    if isinstance(g, GDeleg):
        return frozenset((g.src, g.dst, g.role)) | roles_of(g.cont)
    raise TypeError(f"not a global type: {g!r}")


def gvar_occurs(var: str, g: GlobalType) -> bool:
    if isinstance(g, GVar):
        return g.var == var
    if isinstance(g, GRec):
        return g.var != var and gvar_occurs(var, g.body)
    if isinstance(g, (GComR, GComU, GDeleg)):
        return gvar_occurs(var, g.cont)
    if isinstance(g, (GBranR, GBranW)):
        return any(gvar_occurs(var, gi) for _, gi in g.branches)
    if isinstance(g, GPar):
        return gvar_occurs(var, g.left) or gvar_occurs(var, g.right)
    return False


def unreliable_only(term) -> bool:
    """True iff no strongly reliable prefix, no delegation prefix, and (for
    processes) no message queue occurs.  Session initialisation counts as
    reliable.  Weakly reliable branching is allowed."""
    if isinstance(term, (Request, Accept, SendR, GetR, SendU, GetU, SelR,
                         BranR, SelW, BranW, Par, Rec, PVar, End, Crash, If,
                         Restrict, DelegOut, DelegIn, Queue)):
        return node_info(term).unrel
    if isinstance(term, (GComR, GBranR, GDeleg, LSendR, LGetR, LSelR, LBranR,
                         LDelegOut, LDelegIn)):
        return False
    if isinstance(term, (GEnd, GVar, LEnd, LVar)):
        return True
    if isinstance(term, GComU):
        return unreliable_only(term.cont)
    if isinstance(term, GBranW):
        return all(unreliable_only(gi) for _, gi in term.branches)
    if isinstance(term, GPar):
        return unreliable_only(term.left) and unreliable_only(term.right)
    if isinstance(term, GRec):
        return unreliable_only(term.body)
    if isinstance(term, (LSendU, LGetU)):
        return unreliable_only(term.cont)
    if isinstance(term, (LSelW, LBranW)):
        return all(unreliable_only(li) for _, li in term.branches)
    if isinstance(term, LRec):
        return unreliable_only(term.body)
    raise TypeError(f"unsupported term: {term!r}")


def _proc_children(p: Process):
    """Direct subprocesses with the names the surrounding constructor binds
    in them."""
    if isinstance(p, (Request, Accept)):
        return [(p.body, {p.session})]
    if isinstance(p, (SendR, SendU, SelR, SelW, DelegOut)):
        return [(p.cont, set())]
    if isinstance(p, GetR):
        return [(p.cont, {p.binder})]
    if isinstance(p, GetU):
        return [(p.cont, {p.binder})]
    if isinstance(p, (BranR, BranW)):
        return [(pi, set()) for _, pi in p.branches]
    if isinstance(p, Par):
        return [(p.left, set()), (p.right, set())]
    if isinstance(p, Rec):
        return [(p.body, set())]
    if isinstance(p, If):
        return [(p.then, set()), (p.els, set())]
    if isinstance(p, Restrict):
        return [(p.body, {p.name})]
    if isinstance(p, DelegIn):
        return [(p.cont, {p.chan, p.crole})]
    return []


def free_names(p: Process) -> frozenset:
    """Free names of a process: session channels, shared channels, and value
    names.  Process variables are tracked separately."""
    return node_info(p).free


def actors_of(p: Process) -> frozenset:
    """Actors of a process: every (free session, first role) pair mentioned
    by an action prefix, at any syntactic depth."""
    return node_info(p).actors


def has_action_prefixes(p: Process) -> bool:
    """True iff any session-initialisation or communication prefix occurs.
    Conditionals, recursion, queues, end, and crash are not action
    prefixes."""
    return node_info(p).prefixes


# ---------------------------------------------------------------------------
# fresh names and substitution


def fresh_name(base: str, avoid) -> str:
    if base not in avoid:
        return base
    k = 2
    while f"{base}_{k}" in avoid:
        k += 1
    return f"{base}_{k}"


def _repl_names(repl) -> frozenset:
    if isinstance(repl, str):
        return frozenset((repl,))
    return expr_names(repl)


def _as_channel(repl, slot_desc: str) -> str:
    if isinstance(repl, str):
        return repl
    if isinstance(repl, Name):
        return repl.id
    raise ValueError(f"cannot substitute a non-name into {slot_desc}")


def process_substitute(p: Process, mapping: Mapping[str, Union[Expr, str]]) -> Process:
    """Capture-avoiding substitution of names by expressions or channel
    names, uniformly over value, channel, and session positions."""
    mapping = {k: v for k, v in mapping.items()}
    if not mapping:
        return p
    avoid = set()
    for v in mapping.values():
        avoid |= _repl_names(v)

    def sub_chan(name, m):
        if name in m:
            return _as_channel(m[name], "a channel position")
        return name

    def sub_expr(e, m):
        em = {k: (Name(v) if isinstance(v, str) else v) for k, v in m.items()}
        return expr_substitute(e, em)

    def rebind(binder, body, m, rename_fn):
        """Handle one binder: drop shadowed keys, rename on capture."""
        m2 = {k: v for k, v in m.items() if k != binder}
        if not m2:
            return binder, body, m2
        if binder in avoid:
            nb = fresh_name(binder, avoid | free_names(body) | set(m2))
            body = rename_fn(body, binder, nb)
            return nb, body, m2
        return binder, body, m2

    def walk(q, m):
        if not m:
            return q
        if isinstance(q, (End, Crash, PVar)):
            return q
        # untouched subtrees are shared, not copied
        free = node_info(q).free
        if not any(k in free for k in m):
            return q
        if isinstance(q, Request):
            b, body, m2 = rebind(q.session, q.body, m, rename_name)
            return Request(sub_chan(q.shared, m), q.n, b, walk(body, m2))
        if isinstance(q, Accept):
            b, body, m2 = rebind(q.session, q.body, m, rename_name)
            return Accept(sub_chan(q.shared, m), q.role, b, walk(body, m2))
        if isinstance(q, SendR):
            return SendR(sub_chan(q.session, m), q.role, q.peer,
                         sub_expr(q.expr, m), walk(q.cont, m))
        if isinstance(q, GetR):
            b, body, m2 = rebind(q.binder, q.cont, m, rename_name)
            return GetR(sub_chan(q.session, m), q.role, q.peer, b, walk(body, m2))
        if isinstance(q, SendU):
            return SendU(sub_chan(q.session, m), q.role, q.peer, q.label,
                         sub_expr(q.expr, m), walk(q.cont, m))
        if isinstance(q, GetU):
            default = sub_expr(q.default, m)
            b, body, m2 = rebind(q.binder, q.cont, m, rename_name)
            return GetU(sub_chan(q.session, m), q.role, q.peer, q.label,
                        default, b, walk(body, m2))
        if isinstance(q, SelR):
            return SelR(sub_chan(q.session, m), q.role, q.peer, q.label, walk(q.cont, m))
        if isinstance(q, BranR):
            return BranR(sub_chan(q.session, m), q.role, q.peer,
                         tuple((l, walk(pi, m)) for l, pi in q.branches))
        if isinstance(q, SelW):
            return SelW(sub_chan(q.session, m), q.role, q.receivers, q.label,
                        walk(q.cont, m))
        if isinstance(q, BranW):
            return BranW(sub_chan(q.session, m), q.role, q.peer,
                         tuple((l, walk(pi, m)) for l, pi in q.branches),
                         q.default)
        if isinstance(q, Par):
            return Par(walk(q.left, m), walk(q.right, m))
        if isinstance(q, Rec):
            return Rec(q.var, walk(q.body, m))
        if isinstance(q, If):
            return If(sub_expr(q.cond, m), walk(q.then, m), walk(q.els, m))
        if isinstance(q, Restrict):
            b, body, m2 = rebind(q.name, q.body, m, rename_name)
            return Restrict(b, walk(body, m2))
        if isinstance(q, DelegOut):
            return DelegOut(sub_chan(q.session, m), q.role, q.peer,
                            sub_chan(q.chan, m), q.crole, walk(q.cont, m))
        if isinstance(q, DelegIn):
            b, body, m2 = rebind(q.chan, q.cont, m, rename_name)
            return DelegIn(sub_chan(q.session, m), q.role, q.peer, b, q.crole,
                           walk(body, m2))
        if isinstance(q, Queue):
            return Queue(sub_chan(q.session, m), q.src, q.dst,
                         tuple(_msg_sub(i, m) for i in q.items))
        raise TypeError(f"not a process: {q!r}")

    def _msg_sub(msg, m):
        if isinstance(msg, MsgDeleg):
            return MsgDeleg(sub_chan(msg.chan, m), msg.role)
        return msg

    return walk(p, mapping)


def rename_name(p: Process, old: str, new: str) -> Process:
    return process_substitute(p, {old: new})


def process_subst_rolevar(p: Process, var: str, role: int) -> Process:
    """Instantiate a delegation-bound role variable with a concrete role."""

    def sub(r):
        return role if r == var else r

    def walk(q):
        if isinstance(q, (End, Crash, PVar)):
            return q
        if isinstance(q, Request):
            return Request(q.shared, q.n, q.session, walk(q.body))
        if isinstance(q, Accept):
            return Accept(q.shared, q.role, q.session, walk(q.body))
        if isinstance(q, SendR):
            return SendR(q.session, sub(q.role), sub(q.peer), q.expr, walk(q.cont))
        if isinstance(q, GetR):
            return GetR(q.session, sub(q.role), sub(q.peer), q.binder, walk(q.cont))
        if isinstance(q, SendU):
            return SendU(q.session, sub(q.role), sub(q.peer), q.label, q.expr, walk(q.cont))
        if isinstance(q, GetU):
            return GetU(q.session, sub(q.role), sub(q.peer), q.label, q.default,
                        q.binder, walk(q.cont))
        if isinstance(q, SelR):
            return SelR(q.session, sub(q.role), sub(q.peer), q.label, walk(q.cont))
        if isinstance(q, BranR):
            return BranR(q.session, sub(q.role), sub(q.peer),
                         tuple((l, walk(pi)) for l, pi in q.branches))
        if isinstance(q, SelW):
            return SelW(q.session, sub(q.role), tuple(sub(r) for r in q.receivers),
                        q.label, walk(q.cont))
        if isinstance(q, BranW):
            return BranW(q.session, sub(q.role), sub(q.peer),
                         tuple((l, walk(pi)) for l, pi in q.branches), q.default)
        if isinstance(q, Par):
            return Par(walk(q.left), walk(q.right))
        if isinstance(q, Rec):
            return Rec(q.var, walk(q.body))
        if isinstance(q, If):
            return If(q.cond, walk(q.then), walk(q.els))
        if isinstance(q, Restrict):
            return Restrict(q.name, walk(q.body))
        if isinstance(q, DelegOut):
            return DelegOut(q.session, sub(q.role), sub(q.peer), q.chan,
                            sub(q.crole), walk(q.cont))
        if isinstance(q, DelegIn):
            if q.crole == var:  # shadowed
                return DelegIn(q.session, sub(q.role), sub(q.peer), q.chan,
                               q.crole, q.cont)
            return DelegIn(q.session, sub(q.role), sub(q.peer), q.chan,
                           q.crole, walk(q.cont))
        if isinstance(q, Queue):
            return Queue(q.session, sub(q.src), sub(q.dst), q.items)
        raise TypeError(f"not a process: {q!r}")

    return walk(p)


def process_free_pvars(p: Process) -> frozenset:
    return node_info(p).pvars


def process_subst_pvar(p: Process, var: str, repl: Process) -> Process:
    """Substitute a process for a process variable, as in recursion
    unfolding mu X.P -> P{mu X.P / X}."""
    repl_free = free_names(repl)

    def walk(q):
        if isinstance(q, PVar):
            return repl if q.var == var else q
        if isinstance(q, Rec):
            if q.var == var:
                return q
            return Rec(q.var, walk(q.body))
        if isinstance(q, (End, Crash, Queue)):
            return q
        if var not in process_free_pvars(q):
            return q
        if isinstance(q, Request):
            body = q.body
            session = q.session
            if session in repl_free:
                ns = fresh_name(session, repl_free | free_names(body))
                body = rename_name(body, session, ns)
                session = ns
            return Request(q.shared, q.n, session, walk(body))
        if isinstance(q, Accept):
            body = q.body
            session = q.session
            if session in repl_free:
                ns = fresh_name(session, repl_free | free_names(body))
                body = rename_name(body, session, ns)
                session = ns
            return Accept(q.shared, q.role, session, walk(body))
        if isinstance(q, SendR):
            return SendR(q.session, q.role, q.peer, q.expr, walk(q.cont))
        if isinstance(q, GetR):
            binder, body = q.binder, q.cont
            if binder in repl_free:
                nb = fresh_name(binder, repl_free | free_names(body))
                body = rename_name(body, binder, nb)
                binder = nb
            return GetR(q.session, q.role, q.peer, binder, walk(body))
        if isinstance(q, SendU):
            return SendU(q.session, q.role, q.peer, q.label, q.expr, walk(q.cont))
        if isinstance(q, GetU):
            binder, body = q.binder, q.cont
            if binder in repl_free:
                nb = fresh_name(binder, repl_free | free_names(body))
                body = rename_name(body, binder, nb)
                binder = nb
            return GetU(q.session, q.role, q.peer, q.label, q.default, binder, walk(body))
        if isinstance(q, SelR):
            return SelR(q.session, q.role, q.peer, q.label, walk(q.cont))
        if isinstance(q, BranR):
            return BranR(q.session, q.role, q.peer,
                         tuple((l, walk(pi)) for l, pi in q.branches))
        if isinstance(q, SelW):
            return SelW(q.session, q.role, q.receivers, q.label, walk(q.cont))
        if isinstance(q, BranW):
            return BranW(q.session, q.role, q.peer,
                         tuple((l, walk(pi)) for l, pi in q.branches), q.default)
        if isinstance(q, Par):
            return Par(walk(q.left), walk(q.right))
        if isinstance(q, If):
            return If(q.cond, walk(q.then), walk(q.els))
        if isinstance(q, Restrict):
            name, body = q.name, q.body
            if name in repl_free:
                nn = fresh_name(name, repl_free | free_names(body))
                body = rename_name(body, name, nn)
                name = nn
            return Restrict(name, walk(body))
        if isinstance(q, DelegOut):
            return DelegOut(q.session, q.role, q.peer, q.chan, q.crole, walk(q.cont))
        if isinstance(q, DelegIn):
            chan, body = q.chan, q.cont
            if chan in repl_free:
                nc = fresh_name(chan, repl_free | free_names(body))
                body = rename_name(body, chan, nc)
                chan = nc
            return DelegIn(q.session, q.role, q.peer, chan, q.crole, walk(body))
        raise TypeError(f"not a process: {q!r}")

    return walk(p)


def ltype_subst_var(l: LocalType, var: str, repl: LocalType) -> LocalType:
    if isinstance(l, LVar):
        return repl if l.var == var else l
    if isinstance(l, LRec):
        if l.var == var:
            return l
        return LRec(l.var, ltype_subst_var(l.body, var, repl))
    if isinstance(l, LEnd):
        return l
    if isinstance(l, (LSendR, LGetR)):
        return type(l)(l.peer, l.sort, ltype_subst_var(l.cont, var, repl))
    if isinstance(l, (LSendU, LGetU)):
        return type(l)(l.peer, l.label, l.sort, ltype_subst_var(l.cont, var, repl))
    if isinstance(l, (LSelR, LBranR)):
        return type(l)(l.peer, tuple((lab, ltype_subst_var(li, var, repl))
                                     for lab, li in l.branches))
    if isinstance(l, LSelW):
        return LSelW(l.receivers, tuple((lab, ltype_subst_var(li, var, repl))
                                        for lab, li in l.branches))
    if isinstance(l, LBranW):
        return LBranW(l.peer, tuple((lab, ltype_subst_var(li, var, repl))
                                    for lab, li in l.branches), l.default)
    if isinstance(l, (LDelegOut, LDelegIn)):
        return type(l)(l.peer, l.chan, l.role, l.carried,
                       ltype_subst_var(l.cont, var, repl))
    raise TypeError(f"not a local type: {l!r}")


def gtype_subst_var(g: GlobalType, var: str, repl: GlobalType) -> GlobalType:
    if isinstance(g, GVar):
        return repl if g.var == var else g
    if isinstance(g, GRec):
        if g.var == var:
            return g
        return GRec(g.var, gtype_subst_var(g.body, var, repl))
    if isinstance(g, GEnd):
        return g
    if isinstance(g, GComR):
        return GComR(g.src, g.dst, g.sort, gtype_subst_var(g.cont, var, repl))
    if isinstance(g, GComU):
        return GComU(g.src, g.dst, g.label, g.sort, gtype_subst_var(g.cont, var, repl))
    if isinstance(g, GBranR):
        return GBranR(g.src, g.dst, tuple((lab, gtype_subst_var(gi, var, repl))
                                          for lab, gi in g.branches))
    if isinstance(g, GBranW):
        return GBranW(g.src, g.receivers,
                      tuple((lab, gtype_subst_var(gi, var, repl))
                            for lab, gi in g.branches), g.default)
    if isinstance(g, GPar):
        return GPar(gtype_subst_var(g.left, var, repl),
                    gtype_subst_var(g.right, var, repl))
    if isinstance(g, GDeleg):
        return GDeleg(g.src, g.dst, g.chan, g.role, g.ltype,
                      gtype_subst_var(g.cont, var, repl))
    raise TypeError(f"not a global type: {g!r}")


def substitute(term, target: str, replacement):
    """Uniform substitution entry point used by the reduction semantics.

    Dispatches on the shape of term and replacement: values/expressions and
    channel names into processes, process terms for process variables, and
    type terms for type variables (recursion unfolding).
    """
    if isinstance(term, tuple(t for t in (GComR, GComU, GBranR, GBranW, GPar,
                                          GRec, GVar, GEnd, GDeleg))):
        return gtype_subst_var(term, target, replacement)
    if isinstance(term, (LSendR, LGetR, LSendU, LGetU, LSelR, LBranR, LSelW,
                         LBranW, LDelegOut, LDelegIn, LRec, LVar, LEnd)):
        return ltype_subst_var(term, target, replacement)
    # processes
    if isinstance(replacement, (NatV, BoolV, BotV)):
        return process_substitute(term, {target: Lit(replacement)})
    if isinstance(replacement, (Lit, Name, BinOp, Not, Roll, Best, CountAck, Known)):
        return process_substitute(term, {target: replacement})
    if isinstance(replacement, str):
        return process_substitute(term, {target: replacement})
    if isinstance(replacement, int):
        return process_subst_rolevar(term, target, replacement)
    # a process term: recursion unfolding
    return process_subst_pvar(term, target, replacement)
