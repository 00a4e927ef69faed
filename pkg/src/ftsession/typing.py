"""Type environments and the algorithmic typechecker.

The judgement checked is Gamma |- P |> Delta: the process consumes exactly
the session environment Delta.  A global environment Gamma assigns sorts to
value names, global types to shared channels, sorts to unreliable-message
labels, and (type variable, actor) pairs to process variables.  Both
environments are linear: composing a duplicate assignment is an error, and
assignments of actors to the terminated local type are absorbed.

The checker is syntax-directed.  The one nondeterministic point of the
declarative system, restriction, is resolved by trying the value-name rule
first and falling back on a bounded reachability search for restricted
sessions.  Parallel composition splits the session environment by the
actors and queues each side syntactically mentions; leftovers go to a
crashed side when one exists.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from . import syntax as sx
from .pretty import pretty_local
from .projection import project
from .syntax import (ACK, BEL, BOOL, NAT, Actor, Label, Sort,
                     labels_compatible, value_has_sort)


class LinearityViolation(Exception):
    def __init__(self, key, message=""):
        self.key = key
        super().__init__(message or f"duplicate assignment for {key}")


class UnsortedName(Exception):
    def __init__(self, name):
        self.name = name
        super().__init__(f"name {name!r} has no sort in the global environment")


class SortMismatch(Exception):
    def __init__(self, expected, found, where=""):
        self.expected = expected
        self.found = found
        super().__init__(f"expected sort {expected}, found {found}"
                         + (f" in {where}" if where else ""))


@dataclass(frozen=True)
class TypeRejection(Exception):
    rule: str
    path: tuple
    message: str
    expected: Optional[str] = None
    found: Optional[str] = None

    def __str__(self):
        loc = "/".join(str(p) for p in self.path) or "<root>"
        s = f"rule {self.rule} at {loc}: {self.message}"
        if self.expected is not None:
            s += f"\n  expected: {self.expected}\n  found:    {self.found}"
        return s


# ---------------------------------------------------------------------------
# message types


@dataclass(frozen=True)
class MtR:
    sort: Sort


@dataclass(frozen=True)
class MtU:
    label: Label
    sort: Sort


@dataclass(frozen=True)
class MtBranR:
    label: Label


@dataclass(frozen=True)
class MtBranW:
    label: Label


@dataclass(frozen=True)
class MtDeleg:
    chan: str
    role: int


MessageType = Union[MtR, MtU, MtBranR, MtBranW, MtDeleg]


def message_type_of(m: sx.Message, gamma: "GlobalEnv") -> MessageType:
    """The message type a well-typed queue entry would carry."""
    if isinstance(m, sx.MsgR):
        raise TypeError("reliable payloads have no intrinsic sort; " +
                        "use the session environment")
    if isinstance(m, sx.MsgU):
        lab, sort = gamma.label_sort(m.label)
        return MtU(lab, sort)
    if isinstance(m, sx.MsgBranR):
        return MtBranR(m.label)
    if isinstance(m, sx.MsgBranW):
        return MtBranW(m.label)
    if isinstance(m, sx.MsgDeleg):
        return MtDeleg(m.chan, m.role)
    raise TypeError(f"not a message: {m!r}")


# ---------------------------------------------------------------------------
# global environment


@dataclass(frozen=True)
class GlobalEnv:
    value_sorts: tuple = ()    # ((name, Sort), ...)
    shared: tuple = ()         # ((name, GlobalType), ...)
    label_sorts: tuple = ()    # ((Label, Sort), ...), keyed up to compatibility
    procvars: tuple = ()       # ((pvar, (typevar, Actor)), ...)

    # -- construction

    def with_value(self, name: str, sort: Sort) -> "GlobalEnv":
        if self._owns_name(name):
            raise LinearityViolation(name)
        return GlobalEnv(self.value_sorts + ((name, sort),), self.shared,
                         self.label_sorts, self.procvars)

    def with_shared(self, name: str, g) -> "GlobalEnv":
        if self._owns_name(name):
            raise LinearityViolation(name)
        return GlobalEnv(self.value_sorts, self.shared + ((name, g),),
                         self.label_sorts, self.procvars)

    def with_label(self, label, sort: Sort) -> "GlobalEnv":
        if isinstance(label, str):
            label = Label(label)
        for lab, s in self.label_sorts:
            if labels_compatible(lab, label):
                # a compatible label bound to a different sort breaks the
                # one-label-one-sort guarantee
                raise LinearityViolation(label,
                                         f"label {label} already bound to sort {s}")
        return GlobalEnv(self.value_sorts, self.shared,
                         self.label_sorts + ((label, sort),), self.procvars)

    def with_procvar(self, pvar: str, typevar: str, actor: Actor) -> "GlobalEnv":
        if any(x == pvar for x, _ in self.procvars):
            raise LinearityViolation(pvar)
        return GlobalEnv(self.value_sorts, self.shared, self.label_sorts,
                         self.procvars + ((pvar, (typevar, actor)),))

    # -- lookup

    def _owns_name(self, name: str) -> bool:
        return (any(n == name for n, _ in self.value_sorts)
                or any(n == name for n, _ in self.shared))

    def value_sort(self, name: str) -> Sort:
        for n, s in self.value_sorts:
            if n == name:
                return s
        raise UnsortedName(name)

    def has_value(self, name: str) -> bool:
        return any(n == name for n, _ in self.value_sorts)

    def shared_type(self, name: str):
        for n, g in self.shared:
            if n == name:
                return g
        return None

    def label_sort(self, label: Label):
        for lab, s in self.label_sorts:
            if labels_compatible(lab, label):
                return lab, s
        raise UnsortedName(str(label))

    def procvar(self, pvar: str):
        for x, binding in self.procvars:
            if x == pvar:
                return binding
        return None


def make_global_env(shared=None, labels=None, values=None, procvars=None) -> GlobalEnv:
    env = GlobalEnv()
    for name, g in (shared or {}).items():
        env = env.with_shared(name, g)
    for lab, s in (labels or {}).items():
        env = env.with_label(lab, s)
    for name, s in (values or {}).items():
        env = env.with_value(name, s)
    for x, (t, actor) in (procvars or {}).items():
        env = env.with_procvar(x, t, actor)
    return env


# ---------------------------------------------------------------------------
# session environment


@dataclass(frozen=True)
class SessionEnv:
    """Linear map from actors to local types and from directed queue keys
    (session, from, to) to message-type lists.  Composition absorbs
    assignments to the terminated local type."""

    actors: tuple = ()  # ((Actor, LocalType), ...) sorted
    queues: tuple = ()  # (((s, r1, r2), (MessageType, ...)), ...) sorted

    @staticmethod
    def _norm_actors(items):
        return tuple(sorted(items, key=lambda kv: (kv[0].session, kv[0].role)))

    @staticmethod
    def _norm_queues(items):
        return tuple(sorted(items, key=lambda kv: kv[0]))

    def with_actor(self, actor: Actor, ltype) -> "SessionEnv":
        if isinstance(ltype, sx.LEnd):
            return self
        if any(a == actor for a, _ in self.actors):
            raise LinearityViolation(actor)
        return SessionEnv(self._norm_actors(self.actors + ((actor, ltype),)),
                          self.queues)

    def with_queue(self, key: tuple, mts: tuple) -> "SessionEnv":
        if any(k == key for k, _ in self.queues):
            raise LinearityViolation(key)
        return SessionEnv(self.actors,
                          self._norm_queues(self.queues + ((key, tuple(mts)),)))

    def compose(self, other: "SessionEnv") -> "SessionEnv":
        env = self
        for a, l in other.actors:
            env = env.with_actor(a, l)
        for k, mts in other.queues:
            env = env.with_queue(k, mts)
        return env

    # -- lookup / update

    def actor_type(self, actor: Actor):
        for a, l in self.actors:
            if a == actor:
                return l
        return None

    def queue_types(self, key: tuple):
        for k, mts in self.queues:
            if k == key:
                return mts
        return None

    def replace_actor(self, actor: Actor, ltype) -> "SessionEnv":
        rest = tuple((a, l) for a, l in self.actors if a != actor)
        env = SessionEnv(rest, self.queues)
        return env.with_actor(actor, ltype)

    def drop_actor(self, actor: Actor) -> "SessionEnv":
        return SessionEnv(tuple((a, l) for a, l in self.actors if a != actor),
                          self.queues)

    def replace_queue(self, key: tuple, mts: tuple) -> "SessionEnv":
        rest = tuple((k, m) for k, m in self.queues if k != key)
        return SessionEnv(self.actors,
                          self._norm_queues(rest + ((key, tuple(mts)),)))

    def drop_queue(self, key: tuple) -> "SessionEnv":
        return SessionEnv(self.actors, tuple((k, m) for k, m in self.queues
                                             if k != key))

    def restrict_session(self, session: str) -> "SessionEnv":
        return SessionEnv(tuple((a, l) for a, l in self.actors
                                if a.session == session),
                          tuple((k, m) for k, m in self.queues
                                if k[0] == session))

    def without_session(self, session: str) -> "SessionEnv":
        return SessionEnv(tuple((a, l) for a, l in self.actors
                                if a.session != session),
                          tuple((k, m) for k, m in self.queues
                                if k[0] != session))

    def sessions(self) -> frozenset:
        return (frozenset(a.session for a, _ in self.actors)
                | frozenset(k[0] for k, _ in self.queues))

    @property
    def empty(self) -> bool:
        return not self.actors and not self.queues

    def is_unreliable_only(self) -> bool:
        """un(Delta): no reliable or delegation prefixes in any local type
        and no queue assignments."""
        if self.queues:
            return False
        return all(sx.unreliable_only(l) for _, l in self.actors)

    def describe(self) -> str:
        parts = [f"{a}: {pretty_local(l)}" for a, l in self.actors]
        parts += [f"{s}:{r1}->{r2}: [{len(m)} msg types]"
                  for (s, r1, r2), m in self.queues]
        return "{" + ", ".join(parts) + "}"


def env_compose(env, assignment):
    """Add one assignment to an environment (spec surface for the composition
    operator).  For a SessionEnv, assignment is (Actor, LocalType) or
    (queue key, message types); for a GlobalEnv, a ("value"|"shared"|"label"|
    "procvar", ...) tuple."""
    if isinstance(env, SessionEnv):
        key, val = assignment
        if isinstance(key, Actor):
            return env.with_actor(key, val)
        return env.with_queue(key, val)
    kind = assignment[0]
    if kind == "value":
        return env.with_value(assignment[1], assignment[2])
    if kind == "shared":
        return env.with_shared(assignment[1], assignment[2])
    if kind == "label":
        return env.with_label(assignment[1], assignment[2])
    if kind == "procvar":
        return env.with_procvar(assignment[1], assignment[2], assignment[3])
    raise ValueError(f"unknown assignment kind {kind!r}")


# ---------------------------------------------------------------------------
# expression sorting


def expr_sort(gamma: GlobalEnv, e: sx.Expr) -> Sort:
    """Infer the unique sort of an expression.  Bare bot literals have no
    unique sort and must be checked against an expected sort instead."""
    if isinstance(e, sx.Lit):
        v = e.value
        if isinstance(v, sx.NatV):
            return NAT
        if isinstance(v, sx.BoolV):
            return BOOL
        raise SortMismatch("a determinate sort", "bot", "inference")
    if isinstance(e, sx.Name):
        return gamma.value_sort(e.id)
    if isinstance(e, sx.BinOp):
        if e.op in ("+", "-", "*"):
            expr_check(gamma, e.left, NAT)
            expr_check(gamma, e.right, NAT)
            return NAT
        if e.op in ("<=", "<", ">=", ">"):
            expr_check(gamma, e.left, NAT)
            expr_check(gamma, e.right, NAT)
            return BOOL
        if e.op in ("and", "or"):
            expr_check(gamma, e.left, BOOL)
            expr_check(gamma, e.right, BOOL)
            return BOOL
        if e.op in ("==", "!="):
            try:
                s = expr_sort(gamma, e.left)
            except SortMismatch:
                s = expr_sort(gamma, e.right)
                expr_check(gamma, e.left, s)
                return BOOL
            expr_check(gamma, e.right, s)
            return BOOL
        raise ValueError(f"unknown operator {e.op!r}")
    if isinstance(e, sx.Not):
        expr_check(gamma, e.arg, BOOL)
        return BOOL
    if isinstance(e, sx.Roll):
        expr_check(gamma, e.arg, NAT)
        return NAT
    if isinstance(e, sx.Best):
        for item in e.items:
            expr_check(gamma, item, BEL)
        return BEL
    if isinstance(e, sx.CountAck):
        for item in e.items:
            expr_check(gamma, item, ACK)
        return NAT
    if isinstance(e, sx.Known):
        for item in e.items:
            expr_check(gamma, item, BEL)
        return NAT
    raise TypeError(f"not an expression: {e!r}")


def expr_check(gamma: GlobalEnv, e: sx.Expr, expected: Sort):
    """Check an expression against an expected sort; literals are checked by
    value membership, names nominally."""
    if isinstance(e, sx.Lit):
        if not value_has_sort(e.value, expected):
            raise SortMismatch(expected, str(e.value), "literal")
        return
    if isinstance(e, sx.Name):
        found = gamma.value_sort(e.id)
        if found != expected:
            raise SortMismatch(expected, found, f"name {e.id!r}")
        return
    found = expr_sort(gamma, e)
    if found != expected:
        raise SortMismatch(expected, found, "expression")


# ---------------------------------------------------------------------------
# Delta splitting for parallel composition


def used_env_keys(p: sx.Process, gamma: GlobalEnv):
    """The Delta keys a process can possibly consume: free actors, queue
    keys of queue terms, actors delegated away, and the actors of free
    process variables."""
    actors = set()
    queues = set()
    has_crash = [False]

    def walk(q, bound):
        if isinstance(q, sx.Crash):
            has_crash[0] = True
        if isinstance(q, sx.Queue) and q.session not in bound:
            queues.add((q.session, q.src, q.dst))
            for m in q.items:
                if isinstance(m, sx.MsgDeleg) and m.chan not in bound:
                    actors.add(Actor(m.chan, m.role))
        if isinstance(q, (sx.SendR, sx.GetR, sx.SendU, sx.GetU, sx.SelR,
                          sx.BranR, sx.SelW, sx.BranW, sx.DelegOut, sx.DelegIn)):
            if q.session not in bound and isinstance(q.role, int):
                actors.add(Actor(q.session, q.role))
        if isinstance(q, sx.DelegOut) and q.chan not in bound \
                and isinstance(q.crole, int):
            actors.add(Actor(q.chan, q.crole))
        if isinstance(q, sx.PVar):
            binding = gamma.procvar(q.var)
            if binding is not None:
                actors.add(binding[1])
        for child, binds in sx._proc_children(q):
            walk(child, bound | binds)

    walk(p, set())
    return actors, queues, has_crash[0]


def split_env(delta: SessionEnv, left: sx.Process, right: sx.Process,
              gamma: GlobalEnv, path):
    """Split Delta between the two sides of a parallel composition by
    syntactic usage.  Entries needed by neither side are routed to a side
    containing a crash term (which may absorb any unreliable leftovers)."""
    la, lq, lcrash = used_env_keys(left, gamma)
    ra, rq, rcrash = used_env_keys(right, gamma)
    d_left, d_right = SessionEnv(), SessionEnv()
    for a, l in delta.actors:
        if a in la:
            d_left = d_left.with_actor(a, l)
        elif a in ra:
            d_right = d_right.with_actor(a, l)
        elif lcrash and not rcrash:
            d_left = d_left.with_actor(a, l)
        elif rcrash:
            d_right = d_right.with_actor(a, l)
        else:
            raise TypeRejection("Par", path,
                                f"assignment {a}: {pretty_local(l)} is not "
                                f"consumed by either side")
    for k, mts in delta.queues:
        if k in lq:
            d_left = d_left.with_queue(k, mts)
        elif k in rq:
            d_right = d_right.with_queue(k, mts)
        else:
            raise TypeRejection("Par", path,
                                f"queue {k} is not consumed by either side")
    return d_left, d_right


# ---------------------------------------------------------------------------
# the typechecker


@dataclass(frozen=True)
class Derivation:
    rule: str
    path: tuple
    children: tuple = ()

    def rules_used(self):
        out = {self.rule}
        for c in self.children:
            out |= c.rules_used()
        return out


def _reject(rule, path, message, expected=None, found=None):
    raise TypeRejection(rule, tuple(path), message,
                        None if expected is None else str(expected),
                        None if found is None else str(found))


def _demand_actor(delta: SessionEnv, actor: Actor, want, rule, path):
    lt = delta.actor_type(actor)
    if lt is None:
        _reject(rule, path, f"no assignment for actor {actor}",
                expected=want, found="nothing")
    return lt


def typecheck(gamma: GlobalEnv, p: sx.Process, delta: SessionEnv,
              rec_depth: int = 2) -> Derivation:
    """Derive Gamma |- P |> Delta or raise TypeRejection.

    rec_depth bounds recursion unfolding in the reachability search behind
    restricted sessions (the runtime rule for session restriction).
    """
    return _check(gamma, p, delta, (), rec_depth)


def _check(gamma, p, delta, path, rec_depth) -> Derivation:
    if isinstance(p, sx.End):
        if not delta.empty:
            _reject("End", path, "terminated process with live session "
                    "environment", expected="empty environment",
                    found=delta.describe())
        return Derivation("End", path)

    if isinstance(p, sx.Crash):
        if not delta.is_unreliable_only():
            _reject("Crash", path,
                    "a crash term requires an unreliable-only environment",
                    expected="un(Delta)", found=delta.describe())
        return Derivation("Crash", path)

    if isinstance(p, sx.Par):
        d1, d2 = split_env(delta, p.left, p.right, gamma, path)
        c1 = _check(gamma, p.left, d1, path + ("par-left",), rec_depth)
        c2 = _check(gamma, p.right, d2, path + ("par-right",), rec_depth)
        return Derivation("Par", path, (c1, c2))

    if isinstance(p, sx.If):
        try:
            expr_check(gamma, p.cond, BOOL)
        except (SortMismatch, UnsortedName) as e:
            _reject("If", path, f"condition is not boolean: {e}")
        c1 = _check(gamma, p.then, delta, path + ("then",), rec_depth)
        c2 = _check(gamma, p.els, delta, path + ("else",), rec_depth)
        return Derivation("If", path, (c1, c2))

    if isinstance(p, sx.Request):
        g = gamma.shared_type(p.shared)
        if g is None:
            _reject("Req", path, f"shared channel {p.shared!r} has no global type")
        roles = sx.roles_of(g)
        if len(roles) != p.n:
            _reject("Req", path, f"request declares {p.n} roles",
                    expected=f"{len(roles)} roles", found=p.n)
        session, body = _freshen_session(p.session, p.body, gamma, delta)
        actor = Actor(session, p.n)
        inner = delta.with_actor(actor, project(g, p.n))
        child = _check(gamma, body, inner, path + ("req",), rec_depth)
        return Derivation("Req", path, (child,))

    if isinstance(p, sx.Accept):
        g = gamma.shared_type(p.shared)
        if g is None:
            _reject("Acc", path, f"shared channel {p.shared!r} has no global type")
        nroles = len(sx.roles_of(g))
        if not (0 < p.role < nroles):
            _reject("Acc", path, f"accept role {p.role} out of range",
                    expected=f"1..{nroles - 1}", found=p.role)
        session, body = _freshen_session(p.session, p.body, gamma, delta)
        actor = Actor(session, p.role)
        inner = delta.with_actor(actor, project(g, p.role))
        child = _check(gamma, body, inner, path + ("acc",), rec_depth)
        return Derivation("Acc", path, (child,))

    if isinstance(p, sx.SendR):
        actor = Actor(p.session, p.role)
        lt = _demand_actor(delta, actor, "[peer]!r<sort>. _", "RSend", path)
        if not isinstance(lt, sx.LSendR) or lt.peer != p.peer:
            _reject("RSend", path, f"prefix does not match the local type of {actor}",
                    expected=pretty_local(lt), found=f"[{p.peer}]!r<_>. _")
        try:
            expr_check(gamma, p.expr, lt.sort)
        except (SortMismatch, UnsortedName) as e:
            _reject("RSend", path, f"payload: {e}", expected=lt.sort, found="payload")
        child = _check(gamma, p.cont, delta.replace_actor(actor, lt.cont),
                       path + ("cont",), rec_depth)
        return Derivation("RSend", path, (child,))

    if isinstance(p, sx.GetR):
        actor = Actor(p.session, p.role)
        lt = _demand_actor(delta, actor, "[peer]?r<sort>. _", "RGet", path)
        if not isinstance(lt, sx.LGetR) or lt.peer != p.peer:
            _reject("RGet", path, f"prefix does not match the local type of {actor}",
                    expected=pretty_local(lt), found=f"[{p.peer}]?r(_). _")
        binder, cont = _freshen_binder(p.binder, p.cont, gamma, delta)
        g2 = gamma.with_value(binder, lt.sort)
        child = _check(g2, cont, delta.replace_actor(actor, lt.cont),
                       path + ("cont",), rec_depth)
        return Derivation("RGet", path, (child,))

    if isinstance(p, sx.SendU):
        actor = Actor(p.session, p.role)
        lt = _demand_actor(delta, actor, "[peer]!u l<sort>. _", "USend", path)
        if not isinstance(lt, sx.LSendU) or lt.peer != p.peer \
                or not labels_compatible(p.label, lt.label):
            _reject("USend", path, f"prefix does not match the local type of {actor}",
                    expected=pretty_local(lt), found=f"[{p.peer}]!u {p.label}<_>. _")
        try:
            _, bound_sort = gamma.label_sort(lt.label)
        except UnsortedName:
            _reject("USend", path, f"label {lt.label} has no sort in Gamma")
        if bound_sort != lt.sort:
            _reject("USend", path, f"label {lt.label} is bound to a different sort",
                    expected=lt.sort, found=bound_sort)
        try:
            expr_check(gamma, p.expr, lt.sort)
        except (SortMismatch, UnsortedName) as e:
            _reject("USend", path, f"payload: {e}", expected=lt.sort, found="payload")
        child = _check(gamma, p.cont, delta.replace_actor(actor, lt.cont),
                       path + ("cont",), rec_depth)
        return Derivation("USend", path, (child,))

    if isinstance(p, sx.GetU):
        actor = Actor(p.session, p.role)
        lt = _demand_actor(delta, actor, "[peer]?u l<sort>. _", "UGet", path)
        if not isinstance(lt, sx.LGetU) or lt.peer != p.peer \
                or not labels_compatible(p.label, lt.label):
            _reject("UGet", path, f"prefix does not match the local type of {actor}",
                    expected=pretty_local(lt),
                    found=f"[{p.peer}]?u {p.label}(_ -> _). _")
        try:
            _, bound_sort = gamma.label_sort(lt.label)
        except UnsortedName:
            _reject("UGet", path, f"label {lt.label} has no sort in Gamma")
        if bound_sort != lt.sort:
            _reject("UGet", path, f"label {lt.label} is bound to a different sort",
                    expected=lt.sort, found=bound_sort)
        try:
            expr_check(gamma, p.default, lt.sort)
        except (SortMismatch, UnsortedName) as e:
            _reject("UGet", path, f"default value: {e}",
                    expected=lt.sort, found="default value")
        binder, cont = _freshen_binder(p.binder, p.cont, gamma, delta)
        g2 = gamma.with_value(binder, lt.sort)
        child = _check(g2, cont, delta.replace_actor(actor, lt.cont),
                       path + ("cont",), rec_depth)
        return Derivation("UGet", path, (child,))

    if isinstance(p, sx.SelR):
        actor = Actor(p.session, p.role)
        lt = _demand_actor(delta, actor, "[peer]!r{..}", "RSel", path)
        if not isinstance(lt, sx.LSelR) or lt.peer != p.peer:
            _reject("RSel", path, f"prefix does not match the local type of {actor}",
                    expected=pretty_local(lt), found=f"[{p.peer}]!r {p.label}. _")
        cont_type = _branch_lookup(lt.branches, p.label)
        if cont_type is None:
            _reject("RSel", path, f"selected label {p.label} is not offered",
                    expected=pretty_local(lt), found=str(p.label))
        child = _check(gamma, p.cont, delta.replace_actor(actor, cont_type),
                       path + ("cont",), rec_depth)
        return Derivation("RSel", path, (child,))

    if isinstance(p, sx.BranR):
        actor = Actor(p.session, p.role)
        lt = _demand_actor(delta, actor, "[peer]?r{..}", "RBran", path)
        if not isinstance(lt, sx.LBranR) or lt.peer != p.peer:
            _reject("RBran", path, f"prefix does not match the local type of {actor}",
                    expected=pretty_local(lt), found="reliable branching")
        children = _check_branches(gamma, p, lt.branches, delta, actor, path,
                                   rec_depth, "RBran")
        return Derivation("RBran", path, tuple(children))

    if isinstance(p, sx.SelW):
        actor = Actor(p.session, p.role)
        lt = _demand_actor(delta, actor, "[{..}]!w{..}", "WSel", path)
        if not isinstance(lt, sx.LSelW) or tuple(lt.receivers) != tuple(p.receivers):
            _reject("WSel", path, f"prefix does not match the local type of {actor}",
                    expected=pretty_local(lt),
                    found=f"[{set(p.receivers)}]!w {p.label}. _")
        cont_type = _branch_lookup(lt.branches, p.label)
        if cont_type is None:
            _reject("WSel", path, f"selected label {p.label} is not offered",
                    expected=pretty_local(lt), found=str(p.label))
        child = _check(gamma, p.cont, delta.replace_actor(actor, cont_type),
                       path + ("cont",), rec_depth)
        return Derivation("WSel", path, (child,))

    if isinstance(p, sx.BranW):
        actor = Actor(p.session, p.role)
        lt = _demand_actor(delta, actor, "[peer]?w{..}", "WBran", path)
        if not isinstance(lt, sx.LBranW) or lt.peer != p.peer:
            _reject("WBran", path, f"prefix does not match the local type of {actor}",
                    expected=pretty_local(lt), found="weak branching")
        if not labels_compatible(p.default, lt.default):
            _reject("WBran", path, "default labels disagree",
                    expected=str(lt.default), found=str(p.default))
        children = _check_branches(gamma, p, lt.branches, delta, actor, path,
                                   rec_depth, "WBran")
        return Derivation("WBran", path, tuple(children))

    if isinstance(p, sx.DelegOut):
        actor = Actor(p.session, p.role)
        lt = _demand_actor(delta, actor, "[peer]!<<..>>. _", "Deleg", path)
        if not isinstance(lt, sx.LDelegOut) or lt.peer != p.peer:
            _reject("Deleg", path, f"prefix does not match the local type of {actor}",
                    expected=pretty_local(lt), found="delegating send")
        if p.chan != lt.chan or p.crole != lt.role:
            _reject("Deleg", path, "delegated actor disagrees with the type",
                    expected=f"{lt.chan}@{lt.role}", found=f"{p.chan}@{p.crole}")
        delegated = Actor(lt.chan, lt.role)
        d = delta
        if not isinstance(lt.carried, sx.LEnd):
            carried = d.actor_type(delegated)
            if carried != lt.carried:
                _reject("Deleg", path,
                        f"delegated actor {delegated} is not owned at the "
                        f"carried type",
                        expected=pretty_local(lt.carried),
                        found="nothing" if carried is None else pretty_local(carried))
            d = d.drop_actor(delegated)
        child = _check(gamma, p.cont, d.replace_actor(actor, lt.cont),
                       path + ("cont",), rec_depth)
        return Derivation("Deleg", path, (child,))

    if isinstance(p, sx.DelegIn):
        actor = Actor(p.session, p.role)
        lt = _demand_actor(delta, actor, "[peer]?((..)). _", "SRecv", path)
        if not isinstance(lt, sx.LDelegIn) or lt.peer != p.peer:
            _reject("SRecv", path, f"prefix does not match the local type of {actor}",
                    expected=pretty_local(lt), found="delegation reception")
        # align the process binders with the names used by the type
        cont = p.cont
        if p.chan != lt.chan:
            cont = sx.rename_name(cont, p.chan, lt.chan)
        cont = sx.process_subst_rolevar(cont, p.crole, lt.role)
        inner = delta.replace_actor(actor, lt.cont)
        inner = inner.with_actor(Actor(lt.chan, lt.role), lt.carried)
        child = _check(gamma, cont, inner, path + ("cont",), rec_depth)
        return Derivation("SRecv", path, (child,))

    if isinstance(p, sx.Rec):
        candidates = [(a, l) for a, l in delta.actors if isinstance(l, sx.LRec)]
        if not candidates:
            _reject("Rec", path, "no actor with a recursive local type in Delta",
                    expected="mu-typed actor", found=delta.describe())
        errors = []
        for actor, lt in candidates:
            try:
                g2 = gamma.with_procvar(p.var, lt.var, actor)
                inner = delta.replace_actor(actor, lt.body)
                child = _check(g2, p.body, inner, path + ("rec",), rec_depth)
                return Derivation("Rec", path, (child,))
            except TypeRejection as e:
                errors.append(e)
        raise errors[0]

    if isinstance(p, sx.PVar):
        binding = gamma.procvar(p.var)
        if binding is None:
            _reject("Var", path, f"unbound process variable {p.var!r}")
        typevar, actor = binding
        lt = delta.actor_type(actor)
        rest = delta.drop_actor(actor)
        if lt != sx.LVar(typevar) or not rest.empty:
            _reject("Var", path,
                    f"process variable {p.var} must consume exactly "
                    f"{actor}: {typevar}",
                    expected=f"{{{actor}: {typevar}}}", found=delta.describe())
        return Derivation("Var", path)

    if isinstance(p, sx.Queue):
        key = (p.session, p.src, p.dst)
        mts = delta.queue_types(key)
        if mts is None or len(delta.actors) > 0 or len(delta.queues) != 1:
            _reject("MQNil", path,
                    f"queue {key} must consume exactly its own assignment",
                    expected=f"queue {key}", found=delta.describe())
        if len(mts) != len(p.items):
            _reject("MQNil", path, f"queue {key} length disagrees with its type",
                    expected=f"{len(mts)} messages", found=f"{len(p.items)} messages")
        for i, (m, mt) in enumerate(zip(p.items, mts)):
            _check_message(gamma, m, mt, path + (f"msg{i}",))
        return Derivation("MQNil" if not p.items else _mq_rule(p.items[0]),
                          path)

    if isinstance(p, sx.Restrict):
        return _check_restrict(gamma, p, delta, path, rec_depth)

    raise TypeError(f"not a process: {p!r}")


def _mq_rule(m) -> str:
    if isinstance(m, sx.MsgR):
        return "MQComR"
    if isinstance(m, sx.MsgU):
        return "MQComU"
    if isinstance(m, sx.MsgBranR):
        return "MQBranR"
    if isinstance(m, sx.MsgBranW):
        return "MQBranW"
    return "MQDeleg"


def _check_message(gamma, m, mt, path):
    if isinstance(m, sx.MsgR) and isinstance(mt, MtR):
        if not value_has_sort(m.value, mt.sort):
            _reject("MQComR", path, "queued value has the wrong sort",
                    expected=mt.sort, found=m.value)
        return
    if isinstance(m, sx.MsgU) and isinstance(mt, MtU):
        if not labels_compatible(m.label, mt.label):
            _reject("MQComU", path, "queued label disagrees with its type",
                    expected=mt.label, found=m.label)
        try:
            _, bound_sort = gamma.label_sort(mt.label)
        except UnsortedName:
            _reject("MQComU", path, f"label {mt.label} has no sort in Gamma")
        if bound_sort != mt.sort or not value_has_sort(m.value, mt.sort):
            _reject("MQComU", path, "queued value has the wrong sort",
                    expected=mt.sort, found=m.value)
        return
    if isinstance(m, sx.MsgBranR) and isinstance(mt, MtBranR):
        if not labels_compatible(m.label, mt.label):
            _reject("MQBranR", path, "queued label disagrees with its type",
                    expected=mt.label, found=m.label)
        return
    if isinstance(m, sx.MsgBranW) and isinstance(mt, MtBranW):
        if not labels_compatible(m.label, mt.label):
            _reject("MQBranW", path, "queued label disagrees with its type",
                    expected=mt.label, found=m.label)
        return
    if isinstance(m, sx.MsgDeleg) and isinstance(mt, MtDeleg):
        if m.chan != mt.chan or m.role != mt.role:
            _reject("MQDeleg", path, "queued delegation disagrees with its type",
                    expected=f"{mt.chan}@{mt.role}", found=f"{m.chan}@{m.role}")
        return
    _reject(_mq_rule(m), path, "queued message kind disagrees with its type",
            expected=type(mt).__name__, found=type(m).__name__)


def _branch_lookup(branches, label):
    for lab, t in branches:
        if labels_compatible(lab, label):
            return t
    return None


def _check_branches(gamma, p, type_branches, delta, actor, path, rec_depth, rule):
    """Every branch of the type needs a compatible, well-typed process
    branch; extra process branches are dead and stay unchecked."""
    children = []
    for lab_t, lt_i in type_branches:
        pi = _branch_lookup(p.branches, lab_t)
        if pi is None:
            _reject(rule, path, f"no process branch for type label {lab_t}",
                    expected=str(lab_t),
                    found="{" + ", ".join(str(l) for l, _ in p.branches) + "}")
        children.append(_check(gamma, pi, delta.replace_actor(actor, lt_i),
                               path + (str(lab_t),), rec_depth))
    return children


def _freshen_binder(binder, cont, gamma, delta):
    """Alpha-rename a value binder that clashes with Gamma or Delta."""
    taken = ({n for n, _ in gamma.value_sorts} | {n for n, _ in gamma.shared}
             | {a.session for a, _ in delta.actors}
             | {k[0] for k, _ in delta.queues})
    if binder in taken:
        nb = sx.fresh_name(binder, taken | sx.free_names(cont))
        return nb, sx.rename_name(cont, binder, nb)
    return binder, cont


def _freshen_session(session, body, gamma, delta):
    taken = ({n for n, _ in gamma.value_sorts} | {n for n, _ in gamma.shared}
             | {a.session for a, _ in delta.actors}
             | {k[0] for k, _ in delta.queues})
    if session in taken:
        ns = sx.fresh_name(session, taken | sx.free_names(body))
        return ns, sx.rename_name(body, session, ns)
    return session, body


def _check_restrict(gamma, p, delta, path, rec_depth):
    name = p.name
    used_as_session = _uses_as_session(p.body, name)
    if not used_as_session:
        # Res1: restricted value name; infer its sort by trying each one
        errors = []
        for sort in (NAT, BOOL, BEL, ACK):
            try:
                g2 = gamma.with_value(name, sort)
            except LinearityViolation:
                nn = sx.fresh_name(name, sx.free_names(p.body)
                                   | {n for n, _ in gamma.value_sorts}
                                   | {n for n, _ in gamma.shared})
                body = sx.rename_name(p.body, name, nn)
                return _check_restrict(gamma, sx.Restrict(nn, body), delta,
                                       path, rec_depth)
            try:
                child = _check(g2, p.body, delta, path + ("res1",), rec_depth)
                return Derivation("Res1", path, (child,))
            except TypeRejection as e:
                errors.append(e)
        raise errors[0]
    # Res2: restricted session channel; search for a reachable environment
    from .coherence import reachable_envs, initial_env
    if any(a.session == name for a, _ in delta.actors) \
            or any(k[0] == name for k, _ in delta.queues):
        nn = sx.fresh_name(name, delta.sessions() | sx.free_names(p.body))
        return _check_restrict(gamma, sx.Restrict(nn, sx.rename_name(p.body, name, nn)),
                               delta, path, rec_depth)
    errors = []
    seen_types = []
    for _, g in gamma.shared:
        if g in seen_types:
            continue
        seen_types.append(g)
        try:
            init = initial_env(g, name)
        except Exception:
            continue
        for cand in reachable_envs(init, name, max_unfold=rec_depth):
            try:
                child = _check(gamma, p.body, delta.compose(cand),
                               path + ("res2",), rec_depth)
                return Derivation("Res2", path, (child,))
            except (TypeRejection, LinearityViolation) as e:
                errors.append(e)
    if errors:
        raise errors[0]
    _reject("Res2", path,
            f"no global type in Gamma yields a reachable environment for "
            f"session {name!r}")


def _uses_as_session(p, name) -> bool:
    found = [False]

    def walk(q, bound):
        if name in bound:
            return
        if isinstance(q, (sx.SendR, sx.GetR, sx.SendU, sx.GetU, sx.SelR,
                          sx.BranR, sx.SelW, sx.BranW, sx.DelegOut,
                          sx.DelegIn, sx.Queue)):
            if q.session == name:
                found[0] = True
        if isinstance(q, sx.DelegOut) and q.chan == name:
            found[0] = True
        for child, binds in sx._proc_children(q):
            walk(child, bound | binds)

    walk(p, set())
    return found[0]
