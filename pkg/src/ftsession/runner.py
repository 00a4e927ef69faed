"""Seeded execution of programs and replayable traces.

A run pairs a program with an oracle and a seed; the scheduler samples
uniformly among enabled redexes (or round-robins over subjects), so a trace
is a pure function of (program, oracle configuration, seed, policy).
Traces serialize to JSON lines: a header record followed by one event per
step carrying a digest of the post-state.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import syntax as sx
from .oracles import FailureOracle, make_oracle
from .pretty import pretty_process
from .semantics import (Event, OracleView, SystemState, apply_redex,
                        enabled_redexes)
from .typing import GlobalEnv


@dataclass(frozen=True)
class Program:
    """A closed process together with the global environment it is checked
    against."""

    name: str
    process: sx.Process
    gamma: GlobalEnv

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(pretty_process(self.process).encode())
        for name, g in self.gamma.shared:
            from .pretty import pretty_global
            h.update(f"\x00{name}:{pretty_global(g)}".encode())
        for lab, s in self.gamma.label_sorts:
            h.update(f"\x00{lab}:{s}".encode())
        for name, s in self.gamma.value_sorts:
            h.update(f"\x00{name}:{s}".encode())
        return h.hexdigest()[:16]


@dataclass
class Trace:
    header: dict
    events: list  # [Event, ...]
    snapshots: dict = field(default_factory=dict)  # step -> pretty state

    @property
    def seed(self) -> int:
        return self.header["seed"]

    def rules_used(self) -> set:
        return {e.rule for e in self.events}


@dataclass
class RunResult:
    trace: Trace
    final_state: SystemState
    terminal: bool  # no redexes were enabled when the run stopped


def _value_to_json(v):
    if v is None:
        return None
    if isinstance(v, sx.NatV):
        return v.n
    if isinstance(v, sx.BoolV):
        return v.b
    if isinstance(v, sx.BotV):
        return "bot"
    raise TypeError(f"not a value: {v!r}")


def _value_from_json(j):
    if j is None:
        return None
    if isinstance(j, bool):
        return sx.BoolV(j)
    if isinstance(j, int):
        return sx.NatV(j)
    if j == "bot":
        return sx.BOT
    raise ValueError(f"bad value {j!r}")


def event_to_json(e: Event) -> dict:
    return {
        "step": e.step,
        "rule": e.rule,
        "session": e.session,
        "subject": list(e.roles),
        "label": None if e.label is None else str(e.label),
        "value": _value_to_json(e.value),
        "digest": e.digest,
    }


def _parse_label(text):
    if text is None:
        return None
    if "@" in text:
        base, meta = text.split("@", 1)
        return sx.Label(base, int(meta))
    return sx.Label(text)


def event_from_json(d: dict) -> Event:
    return Event(d["step"], d["rule"], d["session"], tuple(d["subject"]),
                 _parse_label(d["label"]), _value_from_json(d["value"]),
                 digest=d["digest"])


class Scheduler:
    """Deterministic choice among enabled redexes.

    random: uniform by seed.  round-robin: rotate over subject keys (session,
    lowest role) and pick uniformly inside the chosen subject's redexes.
    """

    def __init__(self, seed: int, policy: str = "random"):
        if policy not in ("random", "round-robin"):
            raise ValueError(f"unknown scheduler policy {policy!r}")
        self.rng = random.Random(seed)
        self.policy = policy
        self._cursor = 0

    def pick(self, redexes):
        if self.policy == "random":
            return redexes[self.rng.randrange(len(redexes))]
        subjects = sorted({self._subject(r) for r in redexes})
        subject = subjects[self._cursor % len(subjects)]
        self._cursor += 1
        mine = [r for r in redexes if self._subject(r) == subject]
        return mine[self.rng.randrange(len(mine))]

    @staticmethod
    def _subject(redex):
        return (redex.session or "", redex.roles[0] if redex.roles else 0)


def run(program: Program, oracle: FailureOracle, seed: int,
        max_steps: int = 1000, policy: str = "random",
        snapshot_every: int = 0,
        on_step: Optional[Callable] = None) -> RunResult:
    """Execute up to max_steps reductions.  on_step(state, event, step) is
    called after every applied step and may raise to abort."""
    state = SystemState.from_process(program.process)
    scheduler = Scheduler(seed, policy)
    header = {
        "seed": seed,
        "oracle": oracle.descriptor(),
        "program": {"name": program.name, "hash": program.digest()},
        "policy": policy,
        "max_steps": max_steps,
        "initial_digest": state.digest(),
    }
    events = []
    snapshots = {0: pretty_process(state.process)} if snapshot_every else {}
    terminal = False
    for step in range(max_steps):
        redexes = enabled_redexes(state, oracle, step)
        if not redexes:
            terminal = True
            break
        redex = scheduler.pick(redexes)
        state, event = apply_redex(state, redex, step)
        event = Event(event.step, event.rule, event.session, event.roles,
                      event.label, event.value, event.shared, event.n,
                      event.crashed, state.digest())
        oracle.observe(event, OracleView(state, step))
        events.append(event)
        if snapshot_every and (step + 1) % snapshot_every == 0:
            snapshots[step + 1] = pretty_process(state.process)
        if on_step is not None:
            on_step(state, event, step)
    return RunResult(Trace(header, events, snapshots), state, terminal)


# ---------------------------------------------------------------------------
# trace files


def write_trace(trace: Trace, path: str):
    with open(path, "w") as fh:
        fh.write(json.dumps({"header": trace.header}, sort_keys=True) + "\n")
        for e in trace.events:
            fh.write(json.dumps(event_to_json(e), sort_keys=True) + "\n")
        for step, snap in sorted(trace.snapshots.items()):
            fh.write(json.dumps({"snapshot": step, "state": snap}) + "\n")


def read_trace(path: str) -> Trace:
    header = None
    events = []
    snapshots = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if "header" in d:
                header = d["header"]
            elif "snapshot" in d:
                snapshots[d["snapshot"]] = d["state"]
            else:
                events.append(event_from_json(d))
    if header is None:
        raise ValueError(f"{path}: missing trace header")
    return Trace(header, events, snapshots)


def trace_lines(trace: Trace) -> str:
    out = [json.dumps({"header": trace.header}, sort_keys=True)]
    out += [json.dumps(event_to_json(e), sort_keys=True) for e in trace.events]
    out += [json.dumps({"snapshot": s, "state": snap})
            for s, snap in sorted(trace.snapshots.items())]
    return "\n".join(out) + "\n"


def oracle_from_descriptor(desc: dict) -> FailureOracle:
    kwargs = {k: v for k, v in desc.items() if k != "name"}
    if "crash_plan" in kwargs:
        kwargs["crash_plan"] = tuple(tuple(x) for x in kwargs["crash_plan"])
    return make_oracle(desc["name"], **kwargs)


@dataclass
class ReplayReport:
    ok: bool
    step: Optional[int] = None
    message: str = ""


def replay(program: Program, trace: Trace) -> ReplayReport:
    """Re-execute the trace's configuration and compare rules and digests
    step by step."""
    if trace.header["program"]["hash"] != program.digest():
        return ReplayReport(False, None, "program hash disagrees with the header")
    oracle = oracle_from_descriptor(trace.header["oracle"])
    result = run(program, oracle, trace.header["seed"],
                 trace.header["max_steps"], trace.header.get("policy", "random"))
    got = result.trace.events
    if len(got) != len(trace.events):
        return ReplayReport(False, min(len(got), len(trace.events)),
                            f"length mismatch: replay produced {len(got)} events, "
                            f"trace has {len(trace.events)}")
    for mine, theirs in zip(got, trace.events):
        if mine.rule != theirs.rule or mine.digest != theirs.digest:
            return ReplayReport(False, theirs.step,
                                f"divergence at step {theirs.step}: "
                                f"{mine.rule}/{mine.digest[:12]} vs "
                                f"{theirs.rule}/{theirs.digest[:12]}")
    return ReplayReport(True)
