"""Failure-aware reduction semantics.

A SystemState is a parallel soup of components plus the message queues of
its sessions, kept in a canonical order so that redex enumeration, and
therefore seeded scheduling, is reproducible.  Failure-related rules
(unreliable reception and skip, message loss, weak-branch skip, crash) are
gated by a failure oracle consulted exactly as the rules' side conditions.

The five oracle entry points receive an OracleView of the current state so
that instantiations may use global run information (queue occupancy, actor
liveness) without owning the state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

from . import syntax as sx
from .pretty import pretty_process, pretty_value
from .syntax import Actor, Label, labels_compatible


class OpenExpression(Exception):
    def __init__(self, name):
        self.name = name
        super().__init__(f"expression mentions the unbound name {name!r}")


class EvalError(Exception):
    pass


class StaleRedex(Exception):
    """The redex was enumerated from a different state."""


# ---------------------------------------------------------------------------
# expression evaluation


def _die(n: int) -> int:
    # pure pseudo-die so closed-expression evaluation stays deterministic
    return (n * 2654435761 + 101) % 6 + 1


def eval_expr(e: sx.Expr):
    """Evaluate a closed expression to a value; total and deterministic."""
    if isinstance(e, sx.Lit):
        return e.value
    if isinstance(e, sx.Name):
        raise OpenExpression(e.id)
    if isinstance(e, sx.Not):
        v = eval_expr(e.arg)
        if not isinstance(v, sx.BoolV):
            raise EvalError(f"not applied to {pretty_value(v)}")
        return sx.BoolV(not v.b)
    if isinstance(e, sx.Roll):
        v = eval_expr(e.arg)
        if not isinstance(v, sx.NatV):
            raise EvalError(f"roll applied to {pretty_value(v)}")
        return sx.NatV(v.n + _die(v.n))
    if isinstance(e, sx.Best):
        vals = [eval_expr(i) for i in e.items]
        known = [v.n for v in vals if isinstance(v, sx.NatV)]
        if not known:
            raise EvalError("best over an all-bot vector")
        return sx.NatV(min(known))
    if isinstance(e, sx.CountAck):
        vals = [eval_expr(i) for i in e.items]
        return sx.NatV(sum(1 for v in vals if isinstance(v, sx.BoolV) and v.b))
    if isinstance(e, sx.Known):
        vals = [eval_expr(i) for i in e.items]
        return sx.NatV(sum(1 for v in vals if not isinstance(v, sx.BotV)))
    if isinstance(e, sx.BinOp):
        l, r = eval_expr(e.left), eval_expr(e.right)
        op = e.op
        if op in ("+", "-", "*"):
            if not (isinstance(l, sx.NatV) and isinstance(r, sx.NatV)):
                raise EvalError(f"{op} applied to non-numbers")
            if op == "+":
                return sx.NatV(l.n + r.n)
            if op == "-":
                return sx.NatV(max(0, l.n - r.n))
            return sx.NatV(l.n * r.n)
        if op in ("<=", "<", ">=", ">"):
            if not (isinstance(l, sx.NatV) and isinstance(r, sx.NatV)):
                raise EvalError(f"{op} applied to non-numbers")
            return sx.BoolV({"<=": l.n <= r.n, "<": l.n < r.n,
                             ">=": l.n >= r.n, ">": l.n > r.n}[op])
        if op in ("and", "or"):
            if not (isinstance(l, sx.BoolV) and isinstance(r, sx.BoolV)):
                raise EvalError(f"{op} applied to non-booleans")
            return sx.BoolV(l.b and r.b if op == "and" else l.b or r.b)
        if op == "==":
            return sx.BoolV(l == r)
        if op == "!=":
            return sx.BoolV(l != r)
        raise EvalError(f"unknown operator {op!r}")
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# per-component profile cache (components are immutable and shared between
# successive states, so one walk per distinct object suffices)

@dataclass(frozen=True)
class _Profile:
    key: bytes
    actors: frozenset
    unreliable: bool
    has_prefixes: bool
    free: frozenset


def component_profile(p: sx.Process) -> _Profile:
    info = sx.node_info(p)
    return _Profile(info.skey, info.actors, info.unrel, info.prefixes,
                    info.free)


# ---------------------------------------------------------------------------
# system states


@dataclass(frozen=True)
class SystemState:
    """The whole soup: restricted names, parallel components in canonical
    order, queues indexed by (session, from, to), and a counter for fresh
    session names."""

    restricted: tuple = ()
    components: tuple = ()
    queues: tuple = ()  # (((s, r1, r2), (Message, ...)), ...) sorted
    fresh: int = 0

    @staticmethod
    def from_process(p: sx.Process, fresh: int = 0) -> "SystemState":
        restricted, comps, queues = [], [], {}
        _explode(p, restricted, comps, queues)
        comps.sort(key=lambda c: component_profile(c).key)
        return SystemState(tuple(restricted), tuple(comps),
                           tuple(sorted(queues.items())), fresh)

    @property
    def process(self) -> sx.Process:
        """Reassemble the canonical process term."""
        parts = list(self.components)
        parts += [sx.Queue(k[0], k[1], k[2], items)
                  for k, items in self.queues]
        if not parts:
            body = sx.P_END
        else:
            body = parts[-1]
            for q in reversed(parts[:-1]):
                body = sx.Par(q, body)
        for name in reversed(self.restricted):
            body = sx.Restrict(name, body)
        return body

    def queue(self, key):
        for k, items in self.queues:
            if k == key:
                return items
        return None

    def digest(self) -> str:
        cached = self.__dict__.get("_digest")
        if cached is not None:
            return cached
        h = hashlib.sha256()
        h.update(("new " + ",".join(self.restricted)).encode())
        for c in self.components:
            h.update(b"\x00")
            h.update(component_profile(c).key)
        from .pretty import pretty_message
        for k, items in self.queues:
            h.update(f"\x00q{k[0]}:{k[1]}>{k[2]}:".encode())
            for m in items:
                h.update(pretty_message(m).encode())
                h.update(b",")
        digest = h.hexdigest()
        object.__setattr__(self, "_digest", digest)
        return digest

    def names_in_use(self) -> set:
        out = set(self.restricted)
        for c in self.components:
            out |= component_profile(c).free
        for k, items in self.queues:
            out.add(k[0])
            for m in items:
                if isinstance(m, sx.MsgDeleg):
                    out.add(m.chan)
        return out

    def has_actor(self, session: str, role: int) -> bool:
        a = Actor(session, role)
        return any(a in component_profile(c).actors for c in self.components)

    def has_action_prefixes(self) -> bool:
        return any(component_profile(c).has_prefixes for c in self.components)


def _explode(p, restricted, comps, queues):
    if isinstance(p, sx.End):
        return
    if isinstance(p, sx.Par):
        _explode(p.left, restricted, comps, queues)
        _explode(p.right, restricted, comps, queues)
        return
    if isinstance(p, sx.Restrict):
        name = p.name
        body = p.body
        if name in restricted:
            nn = sx.fresh_name(name, set(restricted) | sx.free_names(body))
            body = sx.rename_name(body, name, nn)
            name = nn
        restricted.append(name)
        _explode(body, restricted, comps, queues)
        return
    if isinstance(p, sx.Queue):
        key = (p.session, p.src, p.dst)
        if key in queues:
            raise ValueError(f"duplicate queue {key}; the state cannot be indexed")
        queues[key] = p.items
        return
    comps.append(p)


# ---------------------------------------------------------------------------
# structural congruence normal form


def congruent_normal_form(p: sx.Process) -> sx.Process:
    """Canonical representative of the structural-congruence class: unit
    processes dropped, parallel compositions flattened and sorted by a
    structural key, restrictions floated outward (renamed on clashes), and
    vacuous recursions and restrictions removed."""

    def nf(q):
        if isinstance(q, (sx.End, sx.Crash, sx.PVar, sx.Queue)):
            return q
        if isinstance(q, sx.Rec):
            body = nf(q.body)
            if isinstance(body, sx.End):
                return sx.P_END
            return sx.Rec(q.var, body)
        if isinstance(q, sx.Restrict):
            body = nf(q.body)
            if isinstance(body, sx.End):
                return sx.P_END
            return sx.Restrict(q.name, body)
        if isinstance(q, sx.Par):
            left, right = nf(q.left), nf(q.right)
            restricted, leaves = [], []
            _pull(left, restricted, leaves)
            _pull(right, restricted, leaves)
            leaves = [l for l in leaves if not isinstance(l, sx.End)]
            if not leaves:
                return sx.P_END
            leaves.sort(key=pretty_process)
            body = leaves[-1]
            for l in reversed(leaves[:-1]):
                body = sx.Par(l, body)
            for name in sorted(set(restricted), reverse=True):
                body = sx.Restrict(name, body)
            return body
        if isinstance(q, sx.If):
            return sx.If(q.cond, nf(q.then), nf(q.els))
        if isinstance(q, (sx.Request, sx.Accept)):
            return type(q)(q.shared, q.n if isinstance(q, sx.Request) else q.role,
                           q.session, nf(q.body))
        if isinstance(q, (sx.SendR, sx.SendU, sx.SelR, sx.SelW, sx.DelegOut)):
            return _with_cont(q, nf(q.cont))
        if isinstance(q, (sx.GetR, sx.GetU, sx.DelegIn)):
            return _with_cont(q, nf(q.cont))
        if isinstance(q, (sx.BranR, sx.BranW)):
            branches = tuple((lab, nf(pi)) for lab, pi in q.branches)
            if isinstance(q, sx.BranR):
                return sx.BranR(q.session, q.role, q.peer, branches)
            return sx.BranW(q.session, q.role, q.peer, branches, q.default)
        raise TypeError(f"not a process: {q!r}")

    def _pull(q, restricted, leaves):
        # lift restrictions out of a parallel context, renaming captures
        while isinstance(q, sx.Restrict):
            name = q.name
            if name in restricted or any(name in sx.free_names(l) for l in leaves):
                nn = sx.fresh_name(name, set(restricted) | sx.free_names(q.body)
                                   | {n for l in leaves for n in sx.free_names(l)})
                q = sx.Restrict(nn, sx.rename_name(q.body, name, nn))
                continue
            restricted.append(name)
            q = q.body
        if isinstance(q, sx.Par):
            _pull(q.left, restricted, leaves)
            _pull(q.right, restricted, leaves)
        else:
            leaves.append(q)

    return nf(p)


def _with_cont(q, cont):
    if isinstance(q, sx.SendR):
        return sx.SendR(q.session, q.role, q.peer, q.expr, cont)
    if isinstance(q, sx.SendU):
        return sx.SendU(q.session, q.role, q.peer, q.label, q.expr, cont)
    if isinstance(q, sx.SelR):
        return sx.SelR(q.session, q.role, q.peer, q.label, cont)
    if isinstance(q, sx.SelW):
        return sx.SelW(q.session, q.role, q.receivers, q.label, cont)
    if isinstance(q, sx.DelegOut):
        return sx.DelegOut(q.session, q.role, q.peer, q.chan, q.crole, cont)
    if isinstance(q, sx.GetR):
        return sx.GetR(q.session, q.role, q.peer, q.binder, cont)
    if isinstance(q, sx.GetU):
        return sx.GetU(q.session, q.role, q.peer, q.label, q.default, q.binder, cont)
    if isinstance(q, sx.DelegIn):
        return sx.DelegIn(q.session, q.role, q.peer, q.chan, q.crole, cont)
    raise TypeError(q)


# ---------------------------------------------------------------------------
# redexes and events


@dataclass(frozen=True)
class Redex:
    rule: str
    comps: tuple = ()       # component indices, lowest first
    queue_keys: tuple = ()  # queue keys touched
    session: Optional[str] = None
    roles: tuple = ()
    label: Optional[Label] = None
    shared: Optional[str] = None
    n: Optional[int] = None
    token: str = ""         # digest of the state this was enumerated from

    def describe(self) -> str:
        bits = [self.rule]
        if self.session:
            bits.append(self.session)
        if self.roles:
            bits.append(",".join(map(str, self.roles)))
        if self.label:
            bits.append(str(self.label))
        return " ".join(bits)


@dataclass(frozen=True)
class Event:
    step: int
    rule: str
    session: Optional[str]
    roles: tuple
    label: Optional[Label]
    value: Optional[sx.Value]
    shared: Optional[str] = None
    n: Optional[int] = None
    crashed: tuple = ()  # Actors silenced by a Crash event
    digest: str = ""


class OracleView:
    """Read-only window onto the current state for failure patterns."""

    __slots__ = ("state", "step")

    def __init__(self, state: SystemState, step: int):
        self.state = state
        self.step = step

    def queue_len(self, session, src, dst) -> int:
        items = self.state.queue((session, src, dst))
        return 0 if items is None else len(items)

    def has_actor(self, session, role) -> bool:
        return self.state.has_actor(session, role)


# ---------------------------------------------------------------------------
# redex enumeration


def enabled_redexes(state: SystemState, oracle, step: int = 0) -> list:
    """All rule instances enabled in the given state, with the oracle
    consulted exactly as the failure side conditions."""
    view = OracleView(state, step)
    token = state.digest()
    out = []
    requests = []   # (idx, shared, n)
    accepts = {}    # (shared, role) -> [idx, ...]

    for idx, comp in enumerate(state.components):
        if isinstance(comp, sx.Request):
            requests.append((idx, comp.shared, comp.n))
        elif isinstance(comp, sx.Accept):
            accepts.setdefault((comp.shared, comp.role), []).append(idx)
        elif isinstance(comp, sx.SendR):
            if isinstance(comp.role, int) and state.queue(
                    (comp.session, comp.role, comp.peer)) is not None:
                out.append(Redex("RSend", (idx,),
                                 ((comp.session, comp.role, comp.peer),),
                                 comp.session, (comp.role, comp.peer),
                                 token=token))
        elif isinstance(comp, sx.GetR):
            key = (comp.session, comp.peer, comp.role)
            items = state.queue(key)
            if items and isinstance(items[0], sx.MsgR):
                out.append(Redex("RGet", (idx,), (key,), comp.session,
                                 (comp.role, comp.peer), token=token))
        elif isinstance(comp, sx.SendU):
            if isinstance(comp.role, int) and state.queue(
                    (comp.session, comp.role, comp.peer)) is not None:
                out.append(Redex("USend", (idx,),
                                 ((comp.session, comp.role, comp.peer),),
                                 comp.session, (comp.role, comp.peer),
                                 comp.label, token=token))
        elif isinstance(comp, sx.GetU):
            key = (comp.session, comp.peer, comp.role)
            items = state.queue(key)
            if items and isinstance(items[0], sx.MsgU) \
                    and labels_compatible(comp.label, items[0].label) \
                    and oracle.fp_uget(view, comp.session, comp.role,
                                       comp.peer, items[0].label):
                out.append(Redex("UGet", (idx,), (key,), comp.session,
                                 (comp.role, comp.peer), items[0].label,
                                 token=token))
            if oracle.fp_uskip(view, comp.session, comp.role, comp.peer,
                               comp.label):
                out.append(Redex("USkip", (idx,), (), comp.session,
                                 (comp.role, comp.peer), comp.label,
                                 token=token))
        elif isinstance(comp, sx.SelR):
            if state.queue((comp.session, comp.role, comp.peer)) is not None:
                out.append(Redex("RSel", (idx,),
                                 ((comp.session, comp.role, comp.peer),),
                                 comp.session, (comp.role, comp.peer),
                                 comp.label, token=token))
        elif isinstance(comp, sx.BranR):
            key = (comp.session, comp.peer, comp.role)
            items = state.queue(key)
            if items and isinstance(items[0], sx.MsgBranR) and any(
                    labels_compatible(items[0].label, lab)
                    for lab, _ in comp.branches):
                out.append(Redex("RBran", (idx,), (key,), comp.session,
                                 (comp.role, comp.peer), items[0].label,
                                 token=token))
        elif isinstance(comp, sx.SelW):
            keys = tuple((comp.session, comp.role, r) for r in comp.receivers)
            if all(state.queue(k) is not None for k in keys):
                out.append(Redex("WSel", (idx,), keys, comp.session,
                                 (comp.role,) + tuple(comp.receivers),
                                 comp.label, token=token))
        elif isinstance(comp, sx.BranW):
            key = (comp.session, comp.peer, comp.role)
            items = state.queue(key)
            if items and isinstance(items[0], sx.MsgBranW) and any(
                    labels_compatible(items[0].label, lab)
                    for lab, _ in comp.branches):
                out.append(Redex("WBran", (idx,), (key,), comp.session,
                                 (comp.role, comp.peer), items[0].label,
                                 token=token))
            if oracle.fp_wskip(view, comp.session, comp.role, comp.peer):
                out.append(Redex("WSkip", (idx,), (), comp.session,
                                 (comp.role, comp.peer), comp.default,
                                 token=token))
        elif isinstance(comp, sx.DelegOut):
            if state.queue((comp.session, comp.role, comp.peer)) is not None:
                out.append(Redex("Deleg", (idx,),
                                 ((comp.session, comp.role, comp.peer),),
                                 comp.session, (comp.role, comp.peer),
                                 token=token))
        elif isinstance(comp, sx.DelegIn):
            key = (comp.session, comp.peer, comp.role)
            items = state.queue(key)
            if items and isinstance(items[0], sx.MsgDeleg):
                out.append(Redex("SRecv", (idx,), (key,), comp.session,
                                 (comp.role, comp.peer), token=token))
        elif isinstance(comp, sx.If):
            cond = eval_expr(comp.cond)
            rule = "IfT" if isinstance(cond, sx.BoolV) and cond.b else "IfF"
            out.append(Redex(rule, (idx,), (), _only_session(comp),
                             _only_roles(comp), token=token))
        elif isinstance(comp, sx.Rec):
            out.append(Redex("Rec", (idx,), (), _only_session(comp),
                             _only_roles(comp), token=token))
        # End / Crash / PVar: no rule applies

    # session initialisation: one request plus accepts for every role 1..n-1
    used = set()
    for idx, shared, n in requests:
        picked = [idx]
        complete = True
        for role in range(1, n):
            cands = [i for i in accepts.get((shared, role), ()) if i not in used]
            if not cands:
                complete = False
                break
            picked.append(cands[0])
        if complete:
            used.update(picked)
            out.append(Redex("Init", tuple(sorted(picked)), (), None,
                             tuple(range(1, n + 1)), shared=shared, n=n,
                             token=token))

    # crash failures: any live component owning actors whose remaining
    # behaviour is unreliable-only may crash
    for idx, comp in enumerate(state.components):
        prof = component_profile(comp)
        if prof.actors and prof.unreliable and not isinstance(comp, sx.Crash):
            if oracle.fp_crash(view, comp):
                roles = tuple(sorted(a.role for a in prof.actors))
                sessions = {a.session for a in prof.actors}
                out.append(Redex("Crash", (idx,), (),
                                 next(iter(sessions)) if len(sessions) == 1 else None,
                                 roles, token=token))

    # message loss drops unreliable queue heads
    for key, items in state.queues:
        if items and isinstance(items[0], sx.MsgU) \
                and oracle.fp_ml(view, key[0], key[1], key[2], items[0].label):
            out.append(Redex("ML", (), (key,), key[0], (key[1], key[2]),
                             items[0].label, token=token))

    return out


def _only_session(comp):
    actors = component_profile(comp).actors
    sessions = {a.session for a in actors}
    return next(iter(sessions)) if len(sessions) == 1 else None


def _only_roles(comp):
    return tuple(sorted({a.role for a in component_profile(comp).actors}))


# ---------------------------------------------------------------------------
# redex application


def apply_redex(state: SystemState, redex: Redex, step: int = 0):
    """Apply one enabled redex; returns (next state, event).  Raises
    StaleRedex when the redex was enumerated from another state."""
    if redex.token and redex.token != state.digest():
        raise StaleRedex(redex.describe())

    comps = list(state.components)
    queues = dict(state.queues)
    fresh = state.fresh
    restricted = list(state.restricted)
    rule = redex.rule

    def replace(idx, newcomp):
        comps[idx] = newcomp

    def push(key, msg):
        queues[key] = queues[key] + (msg,)

    def pop(key):
        head = queues[key][0]
        queues[key] = queues[key][1:]
        return head

    label = redex.label
    value = None
    session = redex.session
    crashed = ()
    shared = None
    n = None

    if rule == "Init":
        req = next(state.components[i] for i in redex.comps
                   if isinstance(state.components[i], sx.Request))
        shared, n = redex.shared, redex.n
        taken = state.names_in_use() | {shared}
        name = sx.fresh_name(req.session, taken)
        session = name
        fresh += 1
        restricted.append(name)
        for idx in redex.comps:
            c = state.components[idx]
            replace(idx, sx.process_substitute(c.body, {c.session: name}))
        for r1 in range(1, n + 1):
            for r2 in range(1, n + 1):
                if r1 != r2:
                    queues[(name, r1, r2)] = ()
    elif rule == "RSend":
        c = state.components[redex.comps[0]]
        value = eval_expr(c.expr)
        push(redex.queue_keys[0], sx.MsgR(value))
        replace(redex.comps[0], c.cont)
    elif rule == "RGet":
        c = state.components[redex.comps[0]]
        msg = pop(redex.queue_keys[0])
        value = msg.value
        replace(redex.comps[0],
                sx.process_substitute(c.cont, {c.binder: sx.Lit(value)}))
    elif rule == "USend":
        c = state.components[redex.comps[0]]
        value = eval_expr(c.expr)
        push(redex.queue_keys[0], sx.MsgU(c.label, value))
        replace(redex.comps[0], c.cont)
    elif rule == "UGet":
        c = state.components[redex.comps[0]]
        msg = pop(redex.queue_keys[0])
        value = msg.value
        label = msg.label
        replace(redex.comps[0],
                sx.process_substitute(c.cont, {c.binder: sx.Lit(value)}))
    elif rule == "USkip":
        c = state.components[redex.comps[0]]
        value = eval_expr(c.default)
        replace(redex.comps[0],
                sx.process_substitute(c.cont, {c.binder: sx.Lit(value)}))
    elif rule == "ML":
        msg = pop(redex.queue_keys[0])
        value = msg.value
        label = msg.label
    elif rule == "RSel":
        c = state.components[redex.comps[0]]
        push(redex.queue_keys[0], sx.MsgBranR(c.label))
        replace(redex.comps[0], c.cont)
    elif rule == "RBran":
        c = state.components[redex.comps[0]]
        msg = pop(redex.queue_keys[0])
        label = msg.label
        replace(redex.comps[0], _branch_body(c.branches, msg.label))
    elif rule == "WSel":
        c = state.components[redex.comps[0]]
        for key in redex.queue_keys:
            push(key, sx.MsgBranW(c.label))
        replace(redex.comps[0], c.cont)
    elif rule == "WBran":
        c = state.components[redex.comps[0]]
        msg = pop(redex.queue_keys[0])
        label = msg.label
        replace(redex.comps[0], _branch_body(c.branches, msg.label))
    elif rule == "WSkip":
        c = state.components[redex.comps[0]]
        label = c.default
        replace(redex.comps[0], _branch_body(c.branches, c.default))
    elif rule == "Crash":
        c = state.components[redex.comps[0]]
        crashed = tuple(sorted(component_profile(c).actors))
        replace(redex.comps[0], sx.P_CRASH)
    elif rule == "IfT":
        replace(redex.comps[0], state.components[redex.comps[0]].then)
    elif rule == "IfF":
        replace(redex.comps[0], state.components[redex.comps[0]].els)
    elif rule == "Rec":
        c = state.components[redex.comps[0]]
        replace(redex.comps[0], sx.process_subst_pvar(c.body, c.var, c))
    elif rule == "Deleg":
        c = state.components[redex.comps[0]]
        push(redex.queue_keys[0], sx.MsgDeleg(c.chan, c.crole))
        replace(redex.comps[0], c.cont)
    elif rule == "SRecv":
        c = state.components[redex.comps[0]]
        msg = pop(redex.queue_keys[0])
        cont = sx.process_substitute(c.cont, {c.chan: msg.chan})
        cont = sx.process_subst_rolevar(cont, c.crole, msg.role)
        replace(redex.comps[0], cont)
    else:
        raise ValueError(f"unknown rule {rule!r}")

    # integrate rewritten components: drop units, split parallels, extrude
    # restrictions, absorb queue terms
    final = []
    for comp in comps:
        _explode_into(comp, restricted, final, queues,
                      state.names_in_use())
    final.sort(key=lambda c: component_profile(c).key)
    nxt = SystemState(tuple(restricted), tuple(final),
                      tuple(sorted(queues.items())), fresh)
    event = Event(step, rule, session, redex.roles, label, value,
                  shared=shared, n=n, crashed=crashed)
    return nxt, event


def _branch_body(branches, label):
    for lab, body in branches:
        if labels_compatible(lab, label):
            return body
    raise ValueError(f"no branch compatible with {label}")


def _explode_into(p, restricted, comps, queues, occupied):
    if isinstance(p, sx.End):
        return
    if isinstance(p, sx.Par):
        _explode_into(p.left, restricted, comps, queues, occupied)
        _explode_into(p.right, restricted, comps, queues, occupied)
        return
    if isinstance(p, sx.Restrict):
        name, body = p.name, p.body
        if name in restricted or name in occupied:
            nn = sx.fresh_name(name, set(restricted) | occupied | sx.free_names(body))
            body = sx.rename_name(body, name, nn)
            name = nn
        restricted.append(name)
        _explode_into(body, restricted, comps, queues, occupied)
        return
    if isinstance(p, sx.Queue):
        key = (p.session, p.src, p.dst)
        if key in queues:
            raise ValueError(f"duplicate queue {key}")
        queues[key] = p.items
        return
    comps.append(p)
