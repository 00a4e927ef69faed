"""The rotating-coordinator consensus protocol.

Each round has four phases: participants send their beliefs to the round's
coordinator (unreliably), the coordinator answers with the best belief it
gathered, participants acknowledge or refuse, and the coordinator either
broadcasts a decision over the weakly reliable branch or sends the default
label that rolls everyone into the next round.  Coordinatorship rotates
through all n participants before the protocol loops.

Belief bookkeeping lives in expressions: knowledge vectors are spelled out
as argument lists to best/count_ack/known, and updated beliefs are threaded
textually into the spliced next round.  Conditional branches duplicate
their continuation, which is what lets both data flows share one local
type.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import syntax as sx
from .runner import Program, Trace
from .typing import GlobalEnv, make_global_env

P1, P2, P3 = sx.Label("p1"), sx.Label("p2"), sx.Label("p3")
ZERO, ONE, NEXT = sx.Label("Zero"), sx.Label("One"), sx.Label("Next")

SHARED = "a"


class AllBottom(Exception):
    pass


@dataclass
class KnowledgeVector:
    """Per-role knowledge: belief values (0/1), acknowledgements
    (True/False), or None for absent entries."""

    n: int
    entries: dict = field(default_factory=dict)  # role -> value | None

    def get(self, role):
        return self.entries.get(role)

    def size(self) -> int:
        return sum(1 for v in self.entries.values() if v is not None)


def best(v: KnowledgeVector) -> int:
    """The least known belief value; the choice function is a parameter of
    the algorithm and any deterministic pick among the received values
    preserves validity."""
    known = [x for x in v.entries.values() if isinstance(x, int)]
    if not known:
        raise AllBottom("no known belief to choose from")
    return min(known)


def count_ack(v: KnowledgeVector) -> int:
    return sum(1 for x in v.entries.values() if x is True)


def majority(n: int) -> int:
    # participants never message themselves, so a majority among the
    # n - 1 correspondents
    return -(-(n - 1) // 2)


# ---------------------------------------------------------------------------
# the global type


def build_grc(n: int) -> sx.GlobalType:
    """Protocol specification for n participants: a recursive loop of n
    rounds, one per coordinator, each with three unreliable phases and a
    weakly reliable decision broadcast whose default branch is the next
    round."""
    if n < 2:
        raise ValueError("the protocol needs at least two participants")

    def round_type(c: int) -> sx.GlobalType:
        nxt = round_type(c + 1) if c < n else sx.GVar("t")
        others = [i for i in range(1, n + 1) if i != c]
        g = sx.GBranW(c, tuple(others),
                      ((ZERO, sx.G_END), (ONE, sx.G_END), (NEXT, nxt)), NEXT)
        for i in reversed(others):
            g = sx.GComU(i, c, P3, sx.ACK, g)
        for i in reversed(others):
            g = sx.GComU(c, i, P2, sx.BEL, g)
        for i in reversed(others):
            g = sx.GComU(i, c, P1, sx.BEL, g)
        return g

    return sx.GRec("t", round_type(1))


def gamma_rc(n: int) -> GlobalEnv:
    return make_global_env(shared={SHARED: build_grc(n)},
                           labels={"p1": sx.BEL, "p2": sx.BEL, "p3": sx.ACK})


# ---------------------------------------------------------------------------
# the process family


def _bel_lit(v: int) -> sx.Expr:
    return sx.Lit(sx.NatV(v))


def build_rc_system(n: int, beliefs: dict) -> sx.Process:
    """The runnable system: a request for role n plus accepts for roles
    1..n-1, each body the four-phase loop with the role's initial belief."""
    if n < 2:
        raise ValueError("the protocol needs at least two participants")
    if sorted(beliefs) != list(range(1, n + 1)):
        raise ValueError(f"beliefs must cover roles 1..{n}")
    for v in beliefs.values():
        if v not in (0, 1):
            raise ValueError("beliefs are 0 or 1")

    def body(i: int) -> sx.Process:
        return sx.Rec("X", round_code(i, 1, _bel_lit(beliefs[i])))

    def round_code(i: int, c: int, bel: sx.Expr) -> sx.Process:
        others = [j for j in range(1, n + 1) if j != c]
        if i == c:
            return coordinator(i, c, others, bel)
        return participant(i, c, bel)

    def after(i: int, c: int, bel: sx.Expr) -> sx.Process:
        if c == n:
            return sx.PVar("X")
        return round_code(i, c + 1, bel)

    def coordinator(i, c, others, bel):
        quorum = majority(n)
        votes = {j: sx.Name(f"v{c}_{j}") for j in others}
        # all n entries; the coordinator's own slot carries its belief
        vec = tuple(votes.get(j, bel) for j in range(1, n + 1))

        def phase2(payload, new_bel):
            p = phase3(new_bel)
            for j in reversed(others):
                p = sx.SendU("s", c, j, P2, payload, p)
            return p

        def phase3(new_bel):
            acks = tuple(sx.Name(f"w{c}_{j}") for j in others)
            p = phase4(new_bel, acks)
            for j in reversed(others):
                p = sx.GetU("s", c, j, P3, sx.Lit(sx.BOT), f"w{c}_{j}", p)
            return p

        def phase4(new_bel, acks):
            decide = sx.If(
                sx.BinOp("==", new_bel, _bel_lit(0)),
                sx.SelW("s", c, tuple(others), ZERO, sx.P_END),
                sx.SelW("s", c, tuple(others), ONE, sx.P_END))
            again = sx.SelW("s", c, tuple(others), NEXT, after(i, c, new_bel))
            return sx.If(
                sx.BinOp(">=", sx.CountAck(acks), sx.nat(quorum)),
                decide, again)

        gathered = sx.If(
            sx.BinOp(">=", sx.Known(vec), sx.nat(quorum)),
            phase2(sx.Best(vec), sx.Best(vec)),
            phase2(sx.Lit(sx.BOT), bel))
        for j in reversed(others):
            gathered = sx.GetU("s", c, j, P1, sx.Lit(sx.BOT), f"v{c}_{j}",
                               gathered)
        return gathered

    def participant(i, c, bel):
        got = sx.Name(f"x{c}")
        branch = sx.If(
            sx.BinOp("==", got, sx.Lit(sx.BOT)),
            phase3(i, c, sx.FALSE, bel),
            phase3(i, c, sx.TRUE, got))
        recv = sx.GetU("s", i, c, P2, sx.Lit(sx.BOT), f"x{c}", branch)
        return sx.SendU("s", i, c, P1, bel, recv)

    def phase3(i, c, ack, bel):
        tail = sx.BranW("s", i, c,
                        ((ZERO, sx.P_END), (ONE, sx.P_END),
                         (NEXT, after(i, c, bel))), NEXT)
        return sx.SendU("s", i, c, P3, ack, tail)

    parts = [sx.Request(SHARED, n, "s", body(n))]
    for i in range(1, n):
        parts.append(sx.Accept(SHARED, i, "s", body(i)))
    system = parts[-1]
    for p in reversed(parts[:-1]):
        system = sx.Par(p, system)
    return system


def rc_program(n: int, beliefs: dict) -> Program:
    return Program(f"rc-{n}", build_rc_system(n, beliefs), gamma_rc(n))


# ---------------------------------------------------------------------------
# verdicts over traces


@dataclass
class ConsensusVerdict:
    termination: bool
    agreement: bool
    validity: bool
    decisions: dict              # role -> 0 | 1 (undecided roles absent)
    correct_set: frozenset
    broadcasts: int = 0          # deciding weak broadcasts observed

    @property
    def ok(self) -> bool:
        return self.termination and self.agreement and self.validity

    def __str__(self):
        d = ",".join(f"{r}={v}" for r, v in sorted(self.decisions.items()))
        return (f"termination={self.termination} agreement={self.agreement} "
                f"validity={self.validity} decisions[{d}] "
                f"correct={sorted(self.correct_set)}")


_DECIDING = {"Zero": 0, "One": 1}


def verify_consensus(trace: Trace, initial_beliefs: dict,
                     n: Optional[int] = None) -> ConsensusVerdict:
    """Judge one complete (terminal or step-capped) run: every never-crashed
    role must decide, all decisions must agree, and each decision must be
    someone's initial belief.  Decision provenance is part of agreement:
    all decisions must stem from a single weak broadcast."""
    if n is None:
        n = max(initial_beliefs)
    crashed = set()
    decisions = {}
    deciding_broadcasts = []
    for e in trace.events:
        if e.rule == "Crash":
            crashed.update(a.role for a in e.crashed)
        elif e.rule == "WSel" and e.label and e.label.base in _DECIDING:
            deciding_broadcasts.append(e)
            decisions[e.roles[0]] = _DECIDING[e.label.base]
        elif e.rule == "WBran" and e.label and e.label.base in _DECIDING:
            decisions[e.roles[0]] = _DECIDING[e.label.base]

    correct = frozenset(range(1, n + 1)) - frozenset(crashed)
    termination = all(r in decisions for r in correct)
    values = set(decisions.values())
    agreement = len(values) <= 1 and len(deciding_broadcasts) <= 1
    validity = values <= set(initial_beliefs.values())
    return ConsensusVerdict(termination, agreement, validity, decisions,
                            correct, len(deciding_broadcasts))


def run_consensus(n: int, beliefs: dict, seed: int, gst: int = 200,
                  crash_budget: Optional[int] = None,
                  max_steps: Optional[int] = None, oracle_name: str = "diamond-s",
                  policy: str = "random"):
    """One seeded consensus run; returns (verdict, run result)."""
    from .oracles import make_oracle
    from .runner import run
    if max_steps is None:
        max_steps = gst + 400 * n
    kwargs = {"n": n, "gst": gst} if oracle_name == "diamond-s" else {}
    if crash_budget is not None and oracle_name in ("diamond-s", "cond1"):
        kwargs["crash_budget"] = crash_budget
    oracle = make_oracle(oracle_name, seed=seed, **kwargs)
    result = run(rc_program(n, beliefs), oracle, seed, max_steps, policy)
    return verify_consensus(result.trace, beliefs, n), result


def sweep_consensus(n: int, beliefs: dict, seeds, gst: int = 200,
                    crash_budget: Optional[int] = None,
                    max_steps: Optional[int] = None):
    """Seed sweep; returns (verdicts by seed, aggregate counts)."""
    verdicts = {}
    agg = {"runs": 0, "termination": 0, "agreement": 0, "validity": 0,
           "all": 0}
    for seed in seeds:
        v, _ = run_consensus(n, beliefs, seed, gst, crash_budget, max_steps)
        verdicts[seed] = v
        agg["runs"] += 1
        agg["termination"] += v.termination
        agg["agreement"] += v.agreement
        agg["validity"] += v.validity
        agg["all"] += v.ok
    return verdicts, agg
