"""Failure oracles: pluggable instantiations of the five failure patterns.

An oracle answers the side-condition predicates of the failure-related
reduction rules:

* fp_uget(view, s, r1, r2, l)   may the receiver r1 consume an unreliable
                                message labelled l from r2?
* fp_uskip(view, s, r1, r2, l)  may r1 skip that reception and fall back on
                                its default value?
* fp_ml(view, s, r1, r2, l)     may the head of queue s:r1->r2 be dropped?
* fp_wskip(view, s, r1, r2)     may r1 move to its default branch without
                                the broadcast from r2?
* fp_crash(view, component)     may this component crash?

Answers are deterministic functions of (seed, observation history, query);
run state only changes through observe().  Four instantiations ship:
reliable (no failures), chaotic (everything allowed), a compliant oracle
satisfying the six soundness constraints that subject reduction and
progress rest on, and an eventually-strong-detector oracle for the
rotating-coordinator runs.

The six constraints, for reference:
  1. only unreliable-only components crash;
  2. consuming a present matching message is always allowed;
  3. a message may be dropped iff its receiver may skip it;
  4. after a crash, receptions from the crashed actor become skippable;
  5. after a crash, messages toward the crashed actor become droppable;
  6. a weak branch may be skipped only when its sender is crashed and the
     branch queue is empty.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from . import syntax as sx
from .syntax import Actor


def _hash_unit(seed: int, *parts) -> float:
    """Deterministic uniform draw in [0,1) keyed by seed and query parts."""
    h = hashlib.sha256(repr((seed,) + parts).encode()).digest()
    return int.from_bytes(h[:8], "big") / 2 ** 64


@dataclass
class OracleRunState:
    """Facts accumulated from observed reduction events."""

    crashed_actors: set = field(default_factory=set)
    # Skips and drops must stay paired across time: a skipped reception
    # leaves a message that must remain droppable, and a dropped message
    # leaves a reception that must remain skippable.  Both maps are keyed
    # by (session, from, to, label base) and count the unmatched events.
    pending_drops: dict = field(default_factory=dict)
    pending_skips: dict = field(default_factory=dict)
    crashes_by_session: dict = field(default_factory=dict)
    step_count: int = 0
    session_sizes: dict = field(default_factory=dict)
    # (s, receiver, label base) -> successful receptions since the
    # receiver's last branch point
    round_receipts: dict = field(default_factory=dict)


class FailureOracle:
    """Base oracle: failure-free semantics."""

    name = "reliable"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.state = OracleRunState()

    # -- predicates

    def fp_uget(self, view, s, r1, r2, label) -> bool:
        return True

    def fp_uskip(self, view, s, r1, r2, label) -> bool:
        return False

    def fp_ml(self, view, s, r1, r2, label) -> bool:
        return False

    def fp_wskip(self, view, s, r1, r2) -> bool:
        return False

    def fp_crash(self, view, component) -> bool:
        return False

    # -- run-state updates

    def observe(self, event, view=None):
        st = self.state
        st.step_count += 1
        if event.rule == "Init":
            st.session_sizes[event.session] = event.n
        elif event.rule == "Crash":
            for actor in event.crashed:
                st.crashed_actors.add(actor)
                st.crashes_by_session[actor.session] = \
                    st.crashes_by_session.get(actor.session, 0) + 1
        elif event.rule == "USkip":
            r1, r2 = event.roles
            key = (event.session, r2, r1, event.label.base)
            if st.pending_skips.get(key, 0) > 0:
                st.pending_skips[key] -= 1
            else:
                st.pending_drops[key] = st.pending_drops.get(key, 0) + 1
        elif event.rule == "ML":
            r1, r2 = event.roles
            key = (event.session, r1, r2, event.label.base)
            if st.pending_drops.get(key, 0) > 0:
                st.pending_drops[key] -= 1
            else:
                st.pending_skips[key] = st.pending_skips.get(key, 0) + 1
        elif event.rule == "UGet":
            r1, r2 = event.roles
            key = (event.session, r1, event.label.base)
            st.round_receipts[key] = st.round_receipts.get(key, 0) + 1
        elif event.rule in ("WSel", "WBran", "WSkip"):
            r = event.roles[0]
            for key in [k for k in st.round_receipts
                        if k[0] == event.session and k[1] == r]:
                del st.round_receipts[key]

    # -- helpers shared by instantiations

    def _crashed(self, s, r) -> bool:
        return Actor(s, r) in self.state.crashed_actors

    def descriptor(self) -> dict:
        return {"name": self.name, "seed": self.seed}


def reliable_oracle(seed: int = 0) -> FailureOracle:
    """No failures: receptions always allowed, every failure rule disabled."""
    return FailureOracle(seed)


class ChaoticOracle(FailureOracle):
    """Every pattern holds; failures occur fully nondeterministically, left
    to the scheduler."""

    name = "chaos"

    def fp_uskip(self, view, s, r1, r2, label) -> bool:
        return True

    def fp_ml(self, view, s, r1, r2, label) -> bool:
        return True

    def fp_wskip(self, view, s, r1, r2) -> bool:
        return True

    def fp_crash(self, view, component) -> bool:
        return True


def chaotic_oracle(seed: int = 0) -> ChaoticOracle:
    return ChaoticOracle(seed)


class Condition1Oracle(FailureOracle):
    """Failure patterns satisfying the six soundness constraints.

    Drops and skips share one decision procedure so the drop/skip
    biconditional holds by construction.  The constraints' "eventually"
    is realized as immediately-after-crash by default; a positive
    skip_delay inserts a deterministic per-actor delay for stress tests.
    Crashes are granted while the per-session budget lasts; a crash plan
    [(after_step, role), ...] forces specific crashes for experiments.
    """

    name = "cond1"

    def __init__(self, seed: int = 0, crash_budget: int = 1,
                 p_drop: float = 0.08, p_crash: float = 0.02,
                 epoch_len: int = 16, crash_plan=(), skip_delay: int = 0):
        super().__init__(seed)
        self.crash_budget = crash_budget
        self.p_drop = p_drop
        self.p_crash = p_crash
        self.epoch_len = max(1, epoch_len)
        self.crash_plan = tuple(crash_plan)
        self.skip_delay = skip_delay
        self._crash_steps: dict = {}  # Actor -> step the crash was observed

    def observe(self, event, view=None):
        super().observe(event, view)
        if event.rule == "Crash":
            for actor in event.crashed:
                self._crash_steps.setdefault(actor, self.state.step_count)

    def _crash_known(self, s, r) -> bool:
        actor = Actor(s, r)
        at = self._crash_steps.get(actor)
        if at is None:
            return False
        if self.skip_delay <= 0:
            return True
        delay = int(_hash_unit(self.seed, "delay", s, r) * (self.skip_delay + 1))
        return self.state.step_count >= at + delay

    def _unmatched(self, s, src, dst, base) -> bool:
        key = (s, src, dst, base)
        return (self.state.pending_drops.get(key, 0) > 0
                or self.state.pending_skips.get(key, 0) > 0)

    def _droppable(self, s, src, dst, base) -> bool:
        """Shared decision for fp_ml(s, src, dst, l) and the mirrored
        fp_uskip(s, dst, src, l)."""
        if self._crash_known(s, src) or self._crash_known(s, dst):
            return True
        if self._unmatched(s, src, dst, base):
            return True
        epoch = self.state.step_count // self.epoch_len
        return _hash_unit(self.seed, "drop", s, src, dst, base, epoch) < self.p_drop

    def fp_uskip(self, view, s, r1, r2, label) -> bool:
        return self._droppable(s, r2, r1, label.base)

    def fp_ml(self, view, s, r1, r2, label) -> bool:
        return self._droppable(s, r1, r2, label.base)

    def fp_wskip(self, view, s, r1, r2) -> bool:
        return self._crash_known(s, r2) and view.queue_len(s, r2, r1) == 0

    def fp_crash(self, view, component) -> bool:
        if not sx.unreliable_only(component):
            return False
        actors = sx.actors_of(component)
        if not actors:
            return False
        for s in {a.session for a in actors}:
            if self.state.crashes_by_session.get(s, 0) >= self.crash_budget:
                return False
        for after_step, role in self.crash_plan:
            if view.step >= after_step and any(a.role == role for a in actors):
                return True
        epoch = self.state.step_count // self.epoch_len
        key = tuple(sorted((a.session, a.role) for a in actors))
        return _hash_unit(self.seed, "crash", key, epoch) < self.p_crash

    def descriptor(self) -> dict:
        return {"name": self.name, "seed": self.seed,
                "crash_budget": self.crash_budget, "p_drop": self.p_drop,
                "p_crash": self.p_crash, "epoch_len": self.epoch_len,
                "crash_plan": list(self.crash_plan),
                "skip_delay": self.skip_delay}


def condition1_oracle(seed: int = 0, crash_budget: int = 1,
                      **kwargs) -> Condition1Oracle:
    return Condition1Oracle(seed, crash_budget, **kwargs)


class DiamondSOracle(Condition1Oracle):
    """Eventually-strong failure detection for the rotating-coordinator
    runs.

    Suspicion (skips of phase-2 announcements from a live coordinator) can
    yield false positives before the stabilization step, never after.
    Phase-1/3 receptions may be skipped once the round's receiver already
    holds a majority, so a coordinator is never stuck on stragglers.
    Message loss mirrors exactly the suspected and skipped receptions.
    Weak-branch skips require an actual coordinator crash, and crashes
    respect both the per-session budget and the majority floor (more than
    half the participants stay alive).
    """

    name = "diamond-s"

    def __init__(self, seed: int = 0, n: int = 3, gst: int = 200,
                 crash_budget: Optional[int] = None, p_suspect: float = 0.25,
                 p_crash: float = 0.05, epoch_len: int = 8,
                 phase_labels=("p1", "p2", "p3"), majority: Optional[int] = None,
                 crash_plan=()):
        if crash_budget is None:
            crash_budget = (n - 1) // 2
        super().__init__(seed, crash_budget, p_drop=0.0, p_crash=p_crash,
                         epoch_len=epoch_len, crash_plan=crash_plan)
        self.n = n
        self.gst = gst
        self.p_suspect = p_suspect
        self.early, self.announce, self.late = phase_labels
        self.majority = majority if majority is not None else -(-(n - 1) // 2)

    def _droppable(self, s, src, dst, base) -> bool:
        st = self.state
        if self._crash_known(s, src) or self._crash_known(s, dst):
            return True
        if self._unmatched(s, src, dst, base):
            return True
        if base == self.announce:
            if st.step_count >= self.gst:
                return False  # live coordinators are never suspected anymore
            epoch = st.step_count // self.epoch_len
            return _hash_unit(self.seed, "suspect", s, src, epoch) < self.p_suspect
        if base in (self.early, self.late):
            # the receiver of these streams is the round's coordinator; once
            # a majority arrived the stragglers may be skipped
            return st.round_receipts.get((s, dst, base), 0) >= self.majority
        return False

    def fp_crash(self, view, component) -> bool:
        actors = sx.actors_of(component)
        for s in {a.session for a in actors}:
            alive = self.n - self.state.crashes_by_session.get(s, 0)
            if alive - 1 < -(-self.n // 2):  # keep a strict majority alive
                return False
        return super().fp_crash(view, component)

    def descriptor(self) -> dict:
        d = super().descriptor()
        d.update({"name": self.name, "n": self.n, "gst": self.gst,
                  "p_suspect": self.p_suspect, "majority": self.majority})
        return d


def diamond_s_oracle(seed: int = 0, n: int = 3, **kwargs) -> DiamondSOracle:
    if n - (kwargs.get("crash_budget") or (n - 1) // 2) < -(-n // 2):
        raise ValueError("at least half of the participants must stay immune "
                         "to crashes")
    return DiamondSOracle(seed, n, **kwargs)


ORACLES = {
    "reliable": reliable_oracle,
    "chaos": chaotic_oracle,
    "cond1": condition1_oracle,
    "diamond-s": diamond_s_oracle,
}


def make_oracle(name: str, seed: int = 0, **kwargs) -> FailureOracle:
    try:
        factory = ORACLES[name]
    except KeyError:
        raise ValueError(f"unknown oracle {name!r}; choose from "
                         f"{sorted(ORACLES)}") from None
    return factory(seed=seed, **kwargs)
