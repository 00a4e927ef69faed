"""Session-environment reduction and coherence.

A session environment evolves alongside process reductions: every process
rule has an environment counterpart that rewrites local types and queue
type lists.  Coherence of (Gamma, Delta) means each session's slice of
Delta is reachable from the projections of some global type in Gamma via
these rules.  The simulator tracks the witness incrementally (env_apply);
standalone queries fall back on a bounded breadth-first search.
"""

from __future__ import annotations

from collections import deque
from . import syntax as sx
from .projection import project_all
from .syntax import Actor, labels_compatible
from .typing import (GlobalEnv, MtBranR, MtBranW, MtDeleg, MtR, MtU,
                     SessionEnv)


class DepthExceeded(Exception):
    pass


class MirrorError(Exception):
    """The environment cannot mimic a reduction step: the step left the
    typed behaviour."""


def initial_env(g: sx.GlobalType, session: str) -> SessionEnv:
    """Projections of g for every role plus one empty queue per ordered
    role pair; the environment a freshly initialised session satisfies."""
    env = SessionEnv()
    for role, lt in project_all(g).items():
        env = env.with_actor(Actor(session, role), lt)
    roles = sorted(sx.roles_of(g))
    for r1 in roles:
        for r2 in roles:
            if r1 != r2:
                env = env.with_queue((session, r1, r2), ())
    return env


def _unfold(lt: sx.LRec) -> sx.LocalType:
    return sx.ltype_subst_var(lt.body, lt.var, lt)


def env_step(delta: SessionEnv, session: str):
    """All one-step successors of delta under the environment reduction
    rules, restricted to the given session."""
    out = []
    for actor, lt in delta.actors:
        if actor.session != session:
            continue
        s, r1 = actor.session, actor.role
        if isinstance(lt, sx.LSendR):
            key = (s, r1, lt.peer)
            mts = delta.queue_types(key)
            if mts is not None:
                out.append(("RSend", delta.replace_actor(actor, lt.cont)
                            .replace_queue(key, mts + (MtR(lt.sort),))))
        elif isinstance(lt, sx.LGetR):
            key = (s, lt.peer, r1)
            mts = delta.queue_types(key)
            if mts and mts[0] == MtR(lt.sort):
                out.append(("RGet", delta.replace_actor(actor, lt.cont)
                            .replace_queue(key, mts[1:])))
        elif isinstance(lt, sx.LSendU):
            key = (s, r1, lt.peer)
            mts = delta.queue_types(key)
            if mts is not None:
                out.append(("USend", delta.replace_actor(actor, lt.cont)
                            .replace_queue(key, mts + (MtU(lt.label, lt.sort),))))
        elif isinstance(lt, sx.LGetU):
            key = (s, lt.peer, r1)
            mts = delta.queue_types(key)
            if mts and isinstance(mts[0], MtU) \
                    and labels_compatible(mts[0].label, lt.label) \
                    and mts[0].sort == lt.sort:
                out.append(("UGet", delta.replace_actor(actor, lt.cont)
                            .replace_queue(key, mts[1:])))
            out.append(("USkip", delta.replace_actor(actor, lt.cont)))
        elif isinstance(lt, sx.LSelR):
            key = (s, r1, lt.peer)
            mts = delta.queue_types(key)
            if mts is not None:
                for lab, cont in lt.branches:
                    out.append(("RSel", delta.replace_actor(actor, cont)
                                .replace_queue(key, mts + (MtBranR(lab),))))
        elif isinstance(lt, sx.LBranR):
            key = (s, lt.peer, r1)
            mts = delta.queue_types(key)
            if mts and isinstance(mts[0], MtBranR):
                for lab, cont in lt.branches:
                    if labels_compatible(lab, mts[0].label):
                        out.append(("RBran", delta.replace_actor(actor, cont)
                                    .replace_queue(key, mts[1:])))
        elif isinstance(lt, sx.LSelW):
            keys = [(s, r1, r) for r in lt.receivers]
            queue_views = [delta.queue_types(k) for k in keys]
            if all(q is not None for q in queue_views):
                for lab, cont in lt.branches:
                    nxt = delta.replace_actor(actor, cont)
                    for k, q in zip(keys, queue_views):
                        nxt = nxt.replace_queue(k, q + (MtBranW(lab),))
                    out.append(("WSel", nxt))
        elif isinstance(lt, sx.LBranW):
            key = (s, lt.peer, r1)
            mts = delta.queue_types(key)
            if mts and isinstance(mts[0], MtBranW):
                for lab, cont in lt.branches:
                    if labels_compatible(lab, mts[0].label):
                        out.append(("WBran", delta.replace_actor(actor, cont)
                                    .replace_queue(key, mts[1:])))
            for lab, cont in lt.branches:
                if labels_compatible(lab, lt.default):
                    out.append(("WSkip", delta.replace_actor(actor, cont)))
        elif isinstance(lt, sx.LRec):
            out.append(("Rec", delta.replace_actor(actor, _unfold(lt))))
        elif isinstance(lt, sx.LDelegOut):
            key = (s, r1, lt.peer)
            mts = delta.queue_types(key)
            carried_ok = (isinstance(lt.carried, sx.LEnd)
                          or delta.actor_type(Actor(lt.chan, lt.role)) == lt.carried)
            if mts is not None and carried_ok:
                nxt = delta.drop_actor(Actor(lt.chan, lt.role))
                nxt = nxt.replace_actor(actor, lt.cont)
                out.append(("Deleg", nxt.replace_queue(
                    key, mts + (MtDeleg(lt.chan, lt.role),))))
        elif isinstance(lt, sx.LDelegIn):
            key = (s, lt.peer, r1)
            mts = delta.queue_types(key)
            if mts and mts[0] == MtDeleg(lt.chan, lt.role):
                nxt = delta.replace_actor(actor, lt.cont)
                nxt = nxt.with_actor(Actor(lt.chan, lt.role), lt.carried)
                out.append(("SRecv", nxt.replace_queue(key, mts[1:])))
    # message loss applies to queue heads independently of actor state
    for key, mts in delta.queues:
        if key[0] == session and mts and isinstance(mts[0], MtU):
            out.append(("ML", delta.replace_queue(key, mts[1:])))
    return out


def reachable_envs(init: SessionEnv, session: str, max_unfold: int = 2,
                   max_states: int = 20000):
    """Breadth-first enumeration of environments reachable from init,
    unfolding each recursive type at most max_unfold times per path.
    Yields environments; raises DepthExceeded past the state cap."""
    seen = {init: max_unfold}
    queue = deque([(init, max_unfold)])
    count = 0
    while queue:
        env, credits = queue.popleft()
        count += 1
        if count > max_states:
            raise DepthExceeded(f"more than {max_states} environments explored")
        yield env
        for rule, nxt in env_step(env, session):
            c2 = credits - 1 if rule == "Rec" else credits
            if c2 < 0:
                continue
            prev = seen.get(nxt)
            if prev is None or prev < c2:
                seen[nxt] = c2
                queue.append((nxt, c2))


def coherence_witness(gamma: GlobalEnv, delta: SessionEnv,
                      max_unfold: int = 2, max_states: int = 20000) -> bool:
    """Standalone coherence query: every session slice of delta must be
    reachable from the initial environment of some global type in gamma.
    Definitive False needs an exhausted search; a truncated one raises
    DepthExceeded."""
    for session in sorted(delta.sessions()):
        target = delta.restrict_session(session)
        found = False
        truncated = False
        seen_types = []
        for _, g in gamma.shared:
            if g in seen_types:
                continue
            seen_types.append(g)
            try:
                init = initial_env(g, session)
            except Exception:
                continue
            try:
                for env in reachable_envs(init, session, max_unfold, max_states):
                    if env == target:
                        found = True
                        break
            except DepthExceeded:
                truncated = True
            if found:
                break
        if not found:
            if truncated:
                raise DepthExceeded(
                    f"no witness for session {session!r} within the search bound")
            return False
    return True


# ---------------------------------------------------------------------------
# deterministic mirroring of reduction events


def env_apply(delta: SessionEnv, gamma: GlobalEnv, event) -> SessionEnv:
    """Advance the tracked witness by the environment rule matching one
    reduction event.  Raises MirrorError when the environment cannot mimic
    the step, which signals a violation of subject reduction."""
    rule = event.rule
    s = event.session

    if rule in ("IfT", "IfF", "Crash"):
        return delta
    if rule == "Init":
        g = gamma.shared_type(event.shared)
        if g is None:
            raise MirrorError(f"init on undeclared shared channel {event.shared!r}")
        fresh = initial_env(g, s)
        try:
            return delta.compose(fresh)
        except Exception as e:
            raise MirrorError(f"session {s!r} already present: {e}") from e

    if rule == "Rec":
        for actor, lt in delta.actors:
            if actor.session == s and actor.role in event.roles \
                    and isinstance(lt, sx.LRec):
                return delta.replace_actor(actor, _unfold(lt))
        if not event.roles:
            return delta  # recursion of a process without session actors
        raise MirrorError(f"no recursive local type to unfold for {s}{event.roles}")

    def _actor(role):
        a = Actor(s, role)
        lt = delta.actor_type(a)
        if lt is None:
            raise MirrorError(f"no assignment for actor {a}")
        return a, lt

    def _queue(key):
        mts = delta.queue_types(key)
        if mts is None:
            raise MirrorError(f"no queue assignment for {key}")
        return mts

    if rule == "RSend":
        r1, r2 = event.roles
        a, lt = _actor(r1)
        if not isinstance(lt, sx.LSendR) or lt.peer != r2:
            raise MirrorError(f"{a} is not at a reliable send toward {r2}")
        mts = _queue((s, r1, r2))
        return delta.replace_actor(a, lt.cont).replace_queue(
            (s, r1, r2), mts + (MtR(lt.sort),))

    if rule == "RGet":
        r1, r2 = event.roles
        a, lt = _actor(r1)
        if not isinstance(lt, sx.LGetR) or lt.peer != r2:
            raise MirrorError(f"{a} is not at a reliable reception from {r2}")
        mts = _queue((s, r2, r1))
        if not mts or mts[0] != MtR(lt.sort):
            raise MirrorError(f"queue head for {a} is not r<{lt.sort}>")
        return delta.replace_actor(a, lt.cont).replace_queue((s, r2, r1), mts[1:])

    if rule == "USend":
        r1, r2 = event.roles
        a, lt = _actor(r1)
        if not isinstance(lt, sx.LSendU) or lt.peer != r2 \
                or not labels_compatible(lt.label, event.label):
            raise MirrorError(f"{a} is not at an unreliable send of "
                              f"{event.label} toward {r2}")
        mts = _queue((s, r1, r2))
        return delta.replace_actor(a, lt.cont).replace_queue(
            (s, r1, r2), mts + (MtU(lt.label, lt.sort),))

    if rule == "UGet":
        r1, r2 = event.roles
        a, lt = _actor(r1)
        if not isinstance(lt, sx.LGetU) or lt.peer != r2 \
                or not labels_compatible(lt.label, event.label):
            raise MirrorError(f"{a} is not at an unreliable reception of "
                              f"{event.label} from {r2}")
        mts = _queue((s, r2, r1))
        if not mts or not isinstance(mts[0], MtU) \
                or not labels_compatible(mts[0].label, lt.label) \
                or mts[0].sort != lt.sort:
            raise MirrorError(f"queue head for {a} does not carry "
                              f"{lt.label}<{lt.sort}>")
        return delta.replace_actor(a, lt.cont).replace_queue((s, r2, r1), mts[1:])

    if rule == "USkip":
        r1, r2 = event.roles
        a, lt = _actor(r1)
        if not isinstance(lt, sx.LGetU) or lt.peer != r2 \
                or not labels_compatible(lt.label, event.label):
            raise MirrorError(f"{a} is not at an unreliable reception of "
                              f"{event.label} from {r2}")
        return delta.replace_actor(a, lt.cont)

    if rule == "ML":
        r1, r2 = event.roles
        mts = _queue((s, r1, r2))
        if not mts or not isinstance(mts[0], MtU) \
                or not labels_compatible(mts[0].label, event.label):
            raise MirrorError(f"queue {s}:{r1}->{r2} head is not an unreliable "
                              f"{event.label} message")
        return delta.replace_queue((s, r1, r2), mts[1:])

    if rule == "RSel":
        r1, r2 = event.roles
        a, lt = _actor(r1)
        if not isinstance(lt, sx.LSelR) or lt.peer != r2:
            raise MirrorError(f"{a} is not at a reliable selection toward {r2}")
        pick = _pick_branch(lt.branches, event.label, a)
        mts = _queue((s, r1, r2))
        return delta.replace_actor(a, pick[1]).replace_queue(
            (s, r1, r2), mts + (MtBranR(pick[0]),))

    if rule == "RBran":
        r1, r2 = event.roles
        a, lt = _actor(r1)
        if not isinstance(lt, sx.LBranR) or lt.peer != r2:
            raise MirrorError(f"{a} is not at a reliable branching from {r2}")
        mts = _queue((s, r2, r1))
        if not mts or not isinstance(mts[0], MtBranR) \
                or not labels_compatible(mts[0].label, event.label):
            raise MirrorError(f"queue head for {a} is not branch {event.label}")
        pick = _pick_branch(lt.branches, event.label, a)
        return delta.replace_actor(a, pick[1]).replace_queue((s, r2, r1), mts[1:])

    if rule == "WSel":
        sender = event.roles[0]
        receivers = event.roles[1:]
        a, lt = _actor(sender)
        if not isinstance(lt, sx.LSelW) or tuple(lt.receivers) != tuple(receivers):
            raise MirrorError(f"{a} is not at a weak selection toward {receivers}")
        pick = _pick_branch(lt.branches, event.label, a)
        nxt = delta.replace_actor(a, pick[1])
        for r in receivers:
            mts = _queue((s, sender, r))
            nxt = nxt.replace_queue((s, sender, r), mts + (MtBranW(pick[0]),))
        return nxt

    if rule == "WBran":
        r1, r2 = event.roles
        a, lt = _actor(r1)
        if not isinstance(lt, sx.LBranW) or lt.peer != r2:
            raise MirrorError(f"{a} is not at a weak branching from {r2}")
        mts = _queue((s, r2, r1))
        if not mts or not isinstance(mts[0], MtBranW) \
                or not labels_compatible(mts[0].label, event.label):
            raise MirrorError(f"queue head for {a} is not weak branch {event.label}")
        pick = _pick_branch(lt.branches, event.label, a)
        return delta.replace_actor(a, pick[1]).replace_queue((s, r2, r1), mts[1:])

    if rule == "WSkip":
        r1, r2 = event.roles
        a, lt = _actor(r1)
        if not isinstance(lt, sx.LBranW) or lt.peer != r2:
            raise MirrorError(f"{a} is not at a weak branching from {r2}")
        pick = _pick_branch(lt.branches, lt.default, a)
        return delta.replace_actor(a, pick[1])

    if rule == "Deleg":
        r1, r2 = event.roles
        a, lt = _actor(r1)
        if not isinstance(lt, sx.LDelegOut) or lt.peer != r2:
            raise MirrorError(f"{a} is not at a delegating send toward {r2}")
        delegated = Actor(lt.chan, lt.role)
        nxt = delta
        if not isinstance(lt.carried, sx.LEnd):
            if delta.actor_type(delegated) != lt.carried:
                raise MirrorError(f"delegated actor {delegated} is not owned "
                                  f"at the carried type")
            nxt = nxt.drop_actor(delegated)
        mts = _queue((s, r1, r2))
        return nxt.replace_actor(a, lt.cont).replace_queue(
            (s, r1, r2), mts + (MtDeleg(lt.chan, lt.role),))

    if rule == "SRecv":
        r1, r2 = event.roles
        a, lt = _actor(r1)
        if not isinstance(lt, sx.LDelegIn) or lt.peer != r2:
            raise MirrorError(f"{a} is not at a delegation reception from {r2}")
        mts = _queue((s, r2, r1))
        if not mts or mts[0] != MtDeleg(lt.chan, lt.role):
            raise MirrorError(f"queue head for {a} is not the delegation "
                              f"{lt.chan}@{lt.role}")
        nxt = delta.replace_actor(a, lt.cont)
        nxt = nxt.with_actor(Actor(lt.chan, lt.role), lt.carried)
        return nxt.replace_queue((s, r2, r1), mts[1:])

    raise MirrorError(f"unknown rule {rule!r}")


def _pick_branch(branches, label, actor):
    for lab, cont in branches:
        if labels_compatible(lab, label):
            return lab, cont
    raise MirrorError(f"{actor} offers no branch compatible with {label}")
