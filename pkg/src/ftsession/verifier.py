"""Trace-level verification of the metatheory.

Four properties are checked over executions:

* subject reduction: after every step the state still typechecks, against a
  session environment advanced by the matching environment rule;
* linearity: at most one unguarded actor per (session, role) and one queue
  per directed pair;
* error-freedom: reliable and weak partners exist (possibly crashed, for
  weak interactions) for every pending send, reception, and queued message;
* progress: a state either has no action prefixes left or offers a redex.

A verified run keeps the coherence witness incrementally: the session
environment starts from the projections at initialisation and is advanced
step by step, so no reachability search happens on the hot path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from . import syntax as sx
from .coherence import MirrorError, env_apply
from .oracles import FailureOracle
from .runner import Program, RunResult, Trace, run
from .semantics import (SystemState, apply_redex, component_profile,
                        enabled_redexes)
from .syntax import labels_compatible
from .typing import SessionEnv, TypeRejection, typecheck

RULE_NAMES = ("Init", "RSend", "RGet", "USend", "UGet", "USkip", "ML",
              "RSel", "RBran", "WSel", "WBran", "WSkip", "Crash",
              "IfT", "IfF", "Deleg", "SRecv", "Rec")
STRUCTURAL_RULES = ("Par", "Res", "Struc")


class PreconditionUnmet(Exception):
    pass


@dataclass
class Verdict:
    prop: str
    passed: bool
    step: Optional[int] = None
    detail: str = ""
    status: str = ""  # "", "terminal", "unchecked"
    witness: Optional[list] = None  # replayable event prefix on failure

    def __str__(self):
        mark = "pass" if self.passed else "FAIL"
        bits = [f"{self.prop}: {mark}"]
        if self.status:
            bits.append(f"({self.status})")
        if self.step is not None:
            bits.append(f"at step {self.step}")
        if self.detail:
            bits.append(f"- {self.detail}")
        return " ".join(bits)


# ---------------------------------------------------------------------------
# linearity


def _unguarded_actor_sets(p: sx.Process):
    """Actors of head prefixes.  Conditional branches and recursion bodies
    are alternatives of one sequential thread, so their actor sets are
    unioned, while parallel branches contribute separately."""
    if isinstance(p, (sx.SendR, sx.GetR, sx.SendU, sx.GetU, sx.SelR, sx.BranR,
                      sx.SelW, sx.BranW, sx.DelegOut, sx.DelegIn)):
        if isinstance(p.role, int):
            return [frozenset((sx.Actor(p.session, p.role),))]
        return [frozenset()]
    if isinstance(p, sx.Par):
        return _unguarded_actor_sets(p.left) + _unguarded_actor_sets(p.right)
    if isinstance(p, sx.If):
        sets_t = _union_all(_unguarded_actor_sets(p.then))
        sets_e = _union_all(_unguarded_actor_sets(p.els))
        return [sets_t | sets_e]
    if isinstance(p, (sx.Rec, sx.Restrict)):
        # restriction binds a name: actors on it are not visible outside
        if isinstance(p, sx.Restrict):
            inner = _unguarded_actor_sets(p.body)
            return [frozenset(a for a in s if a.session != p.name)
                    for s in inner]
        return [_union_all(_unguarded_actor_sets(p.body))]
    return [frozenset()]


def _union_all(sets):
    out = frozenset()
    for s in sets:
        out |= s
    return out


def check_linearity(state) -> Verdict:
    """At most one unguarded actor per (session, role), at most one queue
    per (session, from, to)."""
    p = state.process if isinstance(state, SystemState) else state
    counts = {}
    threads = _unguarded_actor_sets(p)
    for actors in threads:
        for a in actors:
            counts[a] = counts.get(a, 0) + 1
    dup = [a for a, c in counts.items() if c > 1]
    if dup:
        return Verdict("linearity", False,
                       detail=f"duplicated unguarded actors: "
                              f"{', '.join(map(str, sorted(map(str, dup))))}")
    qcounts = {}

    def scan_queues(q, bound):
        if isinstance(q, sx.Queue) and q.session not in bound:
            key = (q.session, q.src, q.dst)
            qcounts[key] = qcounts.get(key, 0) + 1
        for child, binds in sx._proc_children(q):
            scan_queues(child, bound | binds)

    scan_queues(p, set())
    qdup = [k for k, c in qcounts.items() if c > 1]
    if qdup:
        return Verdict("linearity", False,
                       detail=f"duplicated queues: {sorted(qdup)}")
    return Verdict("linearity", True)


# ---------------------------------------------------------------------------
# error-freedom


@dataclass
class _PrefixIndex:
    """All free-session action prefixes of a term, at any depth."""

    sendr: set = field(default_factory=set)    # (s, src, dst)
    getr: set = field(default_factory=set)
    selr: dict = field(default_factory=dict)   # (s, src, dst) -> label bases
    branr: dict = field(default_factory=dict)
    selw: dict = field(default_factory=dict)   # (s, src) -> [(receivers, bases)]
    branw: dict = field(default_factory=dict)  # (s, dst, src) -> label bases
    delegout: set = field(default_factory=set)
    delegin: set = field(default_factory=set)
    actors: set = field(default_factory=set)
    # actors handed over by a pending delegation: their future prefixes are
    # hidden behind the receiver's channel variable until reception
    transit: set = field(default_factory=set)


_INDEX_CACHE: dict = {}


def prefix_index(p: sx.Process) -> _PrefixIndex:
    hit = _INDEX_CACHE.get(id(p))
    if hit is not None and hit[0] is p:
        return hit[1]
    idx = _PrefixIndex()

    def walk(q, bound):
        if isinstance(q, sx.DelegOut) and q.chan not in bound \
                and isinstance(q.crole, int):
            idx.transit.add((q.chan, q.crole))
        s = getattr(q, "session", None)
        if s is not None and s not in bound and isinstance(getattr(q, "role", None), int):
            if isinstance(q, sx.SendR):
                idx.sendr.add((s, q.role, q.peer))
            elif isinstance(q, sx.GetR):
                idx.getr.add((s, q.role, q.peer))
            elif isinstance(q, sx.SelR):
                idx.selr.setdefault((s, q.role, q.peer), set()).add(q.label.base)
            elif isinstance(q, sx.BranR):
                idx.branr.setdefault((s, q.role, q.peer), set()).update(
                    lab.base for lab, _ in q.branches)
            elif isinstance(q, sx.SelW):
                idx.selw.setdefault((s, q.role), []).append(
                    (tuple(q.receivers), frozenset((q.label.base,))))
            elif isinstance(q, sx.BranW):
                idx.branw.setdefault((s, q.role, q.peer), set()).update(
                    lab.base for lab, _ in q.branches)
            elif isinstance(q, sx.DelegOut):
                idx.delegout.add((s, q.role, q.peer))
            elif isinstance(q, sx.DelegIn):
                idx.delegin.add((s, q.role, q.peer))
            if isinstance(q, (sx.SendR, sx.GetR, sx.SendU, sx.GetU, sx.SelR,
                              sx.BranR, sx.SelW, sx.BranW, sx.DelegOut,
                              sx.DelegIn)):
                idx.actors.add(sx.Actor(s, q.role))
        for child, binds in sx._proc_children(q):
            walk(child, bound | binds)

    walk(p, set())
    if len(_INDEX_CACHE) > 100_000:
        _INDEX_CACHE.clear()
    _INDEX_CACHE[id(p)] = (p, idx)
    return idx


def _merged_index(state: SystemState) -> _PrefixIndex:
    total = _PrefixIndex()
    for c in state.components:
        idx = prefix_index(c)
        total.sendr |= idx.sendr
        total.getr |= idx.getr
        for k, v in idx.selr.items():
            total.selr.setdefault(k, set()).update(v)
        for k, v in idx.branr.items():
            total.branr.setdefault(k, set()).update(v)
        for k, v in idx.selw.items():
            total.selw.setdefault(k, []).extend(v)
        for k, v in idx.branw.items():
            total.branw.setdefault(k, set()).update(v)
        total.delegout |= idx.delegout
        total.delegin |= idx.delegin
        total.actors |= idx.actors
        total.transit |= idx.transit
    for _, items in state.queues:
        for m in items:
            if isinstance(m, sx.MsgDeleg):
                total.transit.add((m.chan, m.role))
    return total


def check_error_freedom(state) -> Verdict:
    """Matching-partner conditions for reliable, weak, and delegation
    interactions, with the crashed-actor escape for weak ones."""
    if not isinstance(state, SystemState):
        state = SystemState.from_process(state)
    idx = _merged_index(state)
    problems = []

    def transit(s, r) -> bool:
        return (s, r) in idx.transit

    def partner_branr(s, src, dst, base) -> bool:
        return base in idx.branr.get((s, dst, src), ()) or transit(s, dst)

    def partner_branw(s, src, dst, base) -> bool:
        return base in idx.branw.get((s, dst, src), ()) or transit(s, dst)

    # heads of components: the unguarded subjects
    for comp in state.components:
        for head in _unguarded_prefixes(comp):
            s = head.session
            if not isinstance(getattr(head, "role", None), int):
                continue
            if isinstance(head, sx.SendR):
                if (s, head.peer, head.role) not in idx.getr \
                        and not transit(s, head.peer):
                    problems.append(f"reliable send {s}[{head.role},{head.peer}] "
                                    f"has no receiver")
            elif isinstance(head, sx.GetR):
                if (s, head.peer, head.role) not in idx.sendr \
                        and not transit(s, head.peer) and not any(
                            isinstance(m, sx.MsgR)
                            for m in state.queue((s, head.peer, head.role)) or ()):
                    problems.append(f"reliable reception {s}[{head.role},"
                                    f"{head.peer}] has no sender or message")
            elif isinstance(head, sx.SelR):
                if not partner_branr(s, head.role, head.peer, head.label.base):
                    problems.append(f"selection {s}[{head.role},{head.peer}] "
                                    f"{head.label} has no branching partner")
            elif isinstance(head, sx.BranR):
                key = (s, head.peer, head.role)
                sel = idx.selr.get(key, set())
                queued = {m.label.base for m in state.queue(key) or ()
                          if isinstance(m, sx.MsgBranR)}
                bases = {lab.base for lab, _ in head.branches}
                if not (bases & (sel | queued)) and not transit(s, head.peer):
                    problems.append(f"branching {s}[{head.role},{head.peer}] "
                                    f"has no selection or queued label")
            elif isinstance(head, sx.SelW):
                for r in head.receivers:
                    if partner_branw(s, head.role, r, head.label.base):
                        continue
                    if not state.has_actor(s, r):
                        continue  # crashed or terminated receiver
                    problems.append(f"weak selection {s}[{head.role}] {head.label} "
                                    f"has no branching at role {r}")
            elif isinstance(head, sx.BranW):
                key = (s, head.peer, head.role)
                bases = {lab.base for lab, _ in head.branches}
                selected = {b for recv, bs in idx.selw.get((s, head.peer), ())
                            if head.role in recv for b in bs}
                queued = {m.label.base for m in state.queue(key) or ()
                          if isinstance(m, sx.MsgBranW)}
                if bases & (selected | queued) or transit(s, head.peer):
                    continue
                if not state.has_actor(s, head.peer):
                    continue  # sender crashed: the default branch saves us
                problems.append(f"weak branching {s}[{head.role},{head.peer}] "
                                f"has no selection, message, or crashed sender")
            elif isinstance(head, sx.DelegOut):
                if (s, head.peer, head.role) not in idx.delegin \
                        and not transit(s, head.peer):
                    problems.append(f"delegation {s}[{head.role},{head.peer}] "
                                    f"has no receiver")
            elif isinstance(head, sx.DelegIn):
                if (s, head.peer, head.role) not in idx.delegout \
                        and not transit(s, head.peer) and not any(
                            isinstance(m, sx.MsgDeleg)
                            for m in state.queue((s, head.peer, head.role)) or ()):
                    problems.append(f"delegation reception {s}[{head.role},"
                                    f"{head.peer}] has no sender or message")

    # queued messages
    for (s, src, dst), items in state.queues:
        for m in items:
            if isinstance(m, sx.MsgR):
                if (s, dst, src) not in idx.getr and not transit(s, dst):
                    problems.append(f"queued value {s}:{src}->{dst} has no receiver")
            elif isinstance(m, sx.MsgBranR):
                if not partner_branr(s, src, dst, m.label.base):
                    problems.append(f"queued label {m.label} {s}:{src}->{dst} "
                                    f"has no branching")
            elif isinstance(m, sx.MsgBranW):
                if partner_branw(s, src, dst, m.label.base):
                    continue
                if not state.has_actor(s, dst):
                    continue
                problems.append(f"queued weak label {m.label} {s}:{src}->{dst} "
                                f"has no branching or crashed receiver")
            elif isinstance(m, sx.MsgDeleg):
                if (s, dst, src) not in idx.delegin and not transit(s, dst):
                    problems.append(f"queued delegation {s}:{src}->{dst} "
                                    f"has no receiver")

    if problems:
        return Verdict("error-freedom", False, detail="; ".join(problems))
    return Verdict("error-freedom", True)


def _unguarded_prefixes(p: sx.Process):
    """Head action prefixes, looking through conditionals, recursion, and
    restriction (but never through another prefix)."""
    if isinstance(p, (sx.SendR, sx.GetR, sx.SendU, sx.GetU, sx.SelR, sx.BranR,
                      sx.SelW, sx.BranW, sx.DelegOut, sx.DelegIn)):
        return [p]
    if isinstance(p, sx.Par):
        return _unguarded_prefixes(p.left) + _unguarded_prefixes(p.right)
    if isinstance(p, sx.If):
        return _unguarded_prefixes(p.then) + _unguarded_prefixes(p.els)
    if isinstance(p, sx.Rec):
        return _unguarded_prefixes(p.body)
    return []


# ---------------------------------------------------------------------------
# progress


def _complement_ok(state: SystemState, gamma) -> bool:
    reqs = {}
    accs = {}

    def scan(q, bound):
        if isinstance(q, sx.Request) and q.shared not in bound:
            reqs.setdefault(q.shared, []).append(q.n)
        if isinstance(q, sx.Accept) and q.shared not in bound:
            accs.setdefault(q.shared, []).append(q.role)
        for child, binds in sx._proc_children(q):
            scan(child, bound | binds)

    for c in state.components:
        scan(c, set())
    for shared in set(reqs) | set(accs):
        g = gamma.shared_type(shared)
        if g is None:
            return False
        n = len(sx.roles_of(g))
        r_count = len(reqs.get(shared, []))
        if any(k != n for k in reqs.get(shared, [])):
            return False
        for role in range(1, n):
            if len([r for r in accs.get(shared, []) if r == role]) != r_count:
                return False
        extra = [r for r in accs.get(shared, []) if not (0 < r < n)]
        if extra:
            return False
    return True


def detect_stuck(state: SystemState, oracle, gamma=None, step: int = 0,
                 multi_session: bool = False) -> Verdict:
    """Progress at one state: pass when no action prefixes remain or a redex
    is enabled.  Programs that interleave sessions through delegation are
    reported unchecked rather than judged."""
    if gamma is not None and not _complement_ok(state, gamma):
        raise PreconditionUnmet("incomplete session-initialisation complement")
    if multi_session:
        return Verdict("progress", True, step=step, status="unchecked",
                       detail="cross-session interleavings are not judged")
    if not state.has_action_prefixes():
        return Verdict("progress", True, step=step, status="terminal")
    if enabled_redexes(state, oracle, step):
        return Verdict("progress", True, step=step)
    return Verdict("progress", False, step=step,
                   detail="action prefixes remain but no redex is enabled")


def uses_delegation(p: sx.Process) -> bool:
    if isinstance(p, (sx.DelegOut, sx.DelegIn)):
        return True
    if isinstance(p, sx.Queue):
        return any(isinstance(m, sx.MsgDeleg) for m in p.items)
    return any(uses_delegation(c) for c, _ in sx._proc_children(p))


def is_multi_session(program: Program) -> bool:
    return uses_delegation(program.process) or len({n for n, _ in
                                                    program.gamma.shared}) > 1


# ---------------------------------------------------------------------------
# verified runs: engine, witness, and property checks in lockstep


@dataclass
class VerifiedRun:
    result: RunResult
    verdicts: list
    rules_seen: set
    steps: int

    @property
    def ok(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def failures(self):
        return [v for v in self.verdicts if not v.passed]


class SubjectReductionChecker:
    """Online subject-reduction check: mirrors every event on the tracked
    session environment and retypes the state against it."""

    def __init__(self, gamma, initial_state: SystemState,
                 delta: Optional[SessionEnv] = None, typecheck_every: int = 1):
        self.gamma = gamma
        self.delta = delta if delta is not None else SessionEnv()
        self.typecheck_every = max(1, typecheck_every)
        typecheck(gamma, initial_state.process, self.delta)

    def step(self, state: SystemState, event) -> Optional[Verdict]:
        try:
            self.delta = env_apply(self.delta, self.gamma, event)
        except MirrorError as e:
            return Verdict("subject-reduction", False, step=event.step,
                           detail=f"environment cannot mimic {event.rule}: {e}")
        if (event.step + 1) % self.typecheck_every == 0:
            try:
                self._typecheck_state(state)
            except TypeRejection as e:
                return Verdict("subject-reduction", False, step=event.step,
                               detail=f"post-state no longer typechecks: {e}")
        return None

    def _typecheck_state(self, state: SystemState):
        # the tracked witness covers the restricted sessions, so check the
        # bare soup against it rather than re-searching the restriction rule
        soup = SystemState((), state.components, state.queues, state.fresh)
        typecheck(self.gamma, soup.process, self.delta)


def run_verified(program: Program, oracle: FailureOracle, seed: int,
                 max_steps: int = 1000, policy: str = "random",
                 check_progress: bool = True,
                 typecheck_every: int = 1) -> VerifiedRun:
    """Run under the oracle while checking subject reduction, linearity,
    error-freedom, and progress at every visited state."""
    verdicts = []
    multi = is_multi_session(program)
    sr = SubjectReductionChecker(program.gamma,
                                 SystemState.from_process(program.process),
                                 typecheck_every=typecheck_every)
    failed = []

    def on_step(state, event, step):
        v = sr.step(state, event)
        if v is None:
            lv = check_linearity(state)
            v = None if lv.passed else lv
        if v is None:
            ev = check_error_freedom(state)
            v = None if ev.passed else ev
        if v is None and check_progress:
            pv = detect_stuck(state, oracle, program.gamma, step, multi)
            v = None if pv.passed else pv
        if v is not None:
            v.step = step
            failed.append(v)
            raise _AbortRun()

    try:
        result = run(program, oracle, seed, max_steps, policy, on_step=on_step)
    except _AbortRun:
        # re-run with a fresh oracle (same configuration, so the same trace)
        # to materialize the failing prefix without the aborted checks
        from .runner import oracle_from_descriptor
        result = run(program, oracle_from_descriptor(oracle.descriptor()),
                     seed, max_steps, policy)
        prefix = result.trace.events[: (failed[0].step or 0) + 1]
        failed[0].witness = prefix
        verdicts.append(failed[0])
        return VerifiedRun(result, verdicts, {e.rule for e in prefix},
                           len(prefix))

    verdicts.append(Verdict("subject-reduction", True))
    verdicts.append(Verdict("linearity", True))
    verdicts.append(Verdict("error-freedom", True))
    if check_progress:
        status = "unchecked" if multi else \
            ("terminal" if result.terminal else "")
        verdicts.append(Verdict("progress", True, status=status))
    return VerifiedRun(result, verdicts, result.trace.rules_used(),
                       len(result.trace.events))


class _AbortRun(Exception):
    pass


def check_subject_reduction(program: Program, trace: Trace,
                            typecheck_every: int = 1) -> Verdict:
    """Re-simulate a recorded trace and check subject reduction along it."""
    from .runner import oracle_from_descriptor
    oracle = oracle_from_descriptor(trace.header["oracle"])
    vr = run_verified(program, oracle, trace.header["seed"],
                      trace.header["max_steps"],
                      trace.header.get("policy", "random"),
                      check_progress=False, typecheck_every=typecheck_every)
    for v in vr.verdicts:
        if v.prop == "subject-reduction":
            return v
    return vr.verdicts[0]


# ---------------------------------------------------------------------------
# scripted re-execution and witness minimization


def drive(program: Program, oracle: FailureOracle, script) -> Optional[SystemState]:
    """Apply the scripted events in order, matching each against an enabled
    redex by rule, session, subject, and label.  Returns the final state or
    None when some event no longer applies."""
    state = SystemState.from_process(program.process)
    from .semantics import OracleView
    for step, ev in enumerate(script):
        match = None
        for r in enabled_redexes(state, oracle, step):
            if r.rule != ev.rule or r.roles != ev.roles:
                continue
            if ev.rule != "Init" and r.session != ev.session:
                continue
            if (r.label is None) != (ev.label is None):
                continue
            if r.label is not None and not labels_compatible(r.label, ev.label):
                continue
            match = r
            break
        if match is None:
            return None
        state, event = apply_redex(state, match, step)
        oracle.observe(event, OracleView(state, step))
    return state


def minimize_witness(program: Program, oracle_factory: Callable, events,
                     still_fails: Callable) -> list:
    """Greedy one-event deletion: drop events whose removal leaves a
    drivable script on which the failure persists."""
    script = list(events)
    changed = True
    while changed:
        changed = False
        for i in range(len(script) - 1, -1, -1):
            candidate = script[:i] + script[i + 1:]
            state = drive(program, oracle_factory(), candidate)
            if state is not None and still_fails(state, candidate):
                script = candidate
                changed = True
    return script


# ---------------------------------------------------------------------------
# fuzzing


@dataclass
class FuzzReport:
    program: str
    seeds: list
    verdicts: list          # failing verdicts only
    total_steps: int
    rules_seen: set
    terminal_seeds: int

    @property
    def ok(self) -> bool:
        return not self.verdicts

    def coverage(self, implicit: bool = True) -> dict:
        cov = {r: (r in self.rules_seen) for r in RULE_NAMES}
        if implicit:
            # parallel contexts, restriction, and the congruence rules are
            # built into the soup representation; any step exercises them
            for r in STRUCTURAL_RULES:
                cov[r] = self.total_steps > 0
        return cov

    def summary(self) -> str:
        lines = [f"program {self.program}: {len(self.seeds)} seeds, "
                 f"{self.total_steps} steps, "
                 f"{'all properties held' if self.ok else 'FAILURES'}"]
        for v in self.verdicts:
            lines.append("  " + str(v))
        missing = [r for r, hit in self.coverage().items() if not hit]
        if missing:
            lines.append(f"  rules not exercised: {', '.join(missing)}")
        return "\n".join(lines)


def fuzz(program: Program, oracle_factory: Callable, seeds,
         max_steps: int = 1000, policy: str = "random",
         typecheck_every: int = 1) -> FuzzReport:
    """Property-checked seed sweep: every state of every run is verified."""
    verdicts = []
    rules = set()
    total = 0
    terminal = 0
    for seed in seeds:
        vr = run_verified(program, oracle_factory(seed), seed, max_steps,
                          policy, typecheck_every=typecheck_every)
        total += vr.steps
        rules |= vr.rules_seen
        terminal += 1 if vr.result.terminal else 0
        verdicts.extend(v for v in vr.verdicts if not v.passed)
    return FuzzReport(program.name, list(seeds), verdicts, total, rules,
                      terminal)
