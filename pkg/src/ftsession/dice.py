"""The dice-game protocols: worked examples used across tests and demos.

A dealer (role 3) repeatedly announces dice sums to two players.  Variants
cover the three interaction kinds: a fully reliable game, an infinite
unreliable game, and a weakly reliable game whose rounds are decided by a
broadcast with a default exit branch.  Free names (the dealer's running
sums, the players' last-known values) are sorted by the accompanying
environments; `closed_*` variants instantiate them for execution.
"""

from __future__ import annotations

from . import syntax as sx
from .parser import parse_global, parse_process
from .runner import Program
from .typing import GlobalEnv, make_global_env

# -- the reliable game: dealer tells sums, then picks roll or exit rounds

G_DICE = parse_global("""
rec t . 3 ->r 1 : <nat> . 3 ->r 2 : <nat> .
  3 ->r 1 : { roll: 3 ->r 2 : { roll: t },
              exit: 3 ->r 2 : { exit: end } }
""")

P_DICE_R = parse_process("""
  req a[3](s). mu X . s[3,1]!<x1>. s[3,2]!<x2>.
    (if x1 <= 21 and x2 <= 21
     then (s[3,1]!r roll. s[3,2]!r roll. X)
     else (s[3,1]!r exit. s[3,2]!r exit. 0))
| acc a[1](s). mu X . s[1,3]?(y). s[1,3]?r{ roll: X, exit: 0 }
| acc a[2](s). mu X . s[2,3]?(y). s[2,3]?r{ roll: X, exit: 0 }
""")

# -- the infinite unreliable game: rolls forever, failures tolerated

G_DICE_U = parse_global("""
rec t . 3 ->u 1 : roll<nat> . 3 ->u 2 : roll<nat> . t
""")

P_DICE_U = parse_process("""
  req a[3](s). mu X . s[3,1]!u roll<roll(x1)>. s[3,2]!u roll<roll(x2)>. X
| acc a[1](s). mu X . s[1,3]?u roll(x -> x). X
| acc a[2](s). mu X . s[2,3]?u roll(x -> x). X
""")

# -- the weakly reliable game: a broadcast decides play vs end each round

G_DICE_W = parse_global("""
rec t . 3 ->w {1,2} : {
  play: 3 ->u 1 : roll<nat> . 3 ->u 2 : roll<nat> . t,
  default end: 3 ->u 1 : win<bool> . 3 ->u 2 : win<bool> . end }
""")

P_DICE = parse_process("""
  req a[3](s). mu X .
    if x1 <= 21 and x2 <= 21
    then (s[3,{1,2}]!w play. s[3,1]!u roll<roll(x1)>. s[3,2]!u roll<roll(x2)>. X)
    else (s[3,{1,2}]!w end. s[3,1]!u win<x1 <= 21>. s[3,2]!u win<x2 <= 21>. 0)
| acc a[1](s). mu X . s[1,3]?w{ play: s[1,3]?u roll(x -> x). X,
                                default end: s[1,3]?u win(false -> w). 0 }
| acc a[2](s). mu X . s[2,3]?w{ play: s[2,3]?u roll(x -> x). X,
                                default end: s[2,3]?u win(false -> w). 0 }
""")

# -- recursion-free one-round variant (progress experiments)

G_DICE_ONCE = parse_global("""
3 ->w {1,2} : { play: 3 ->u 1 : roll<nat> . 3 ->u 2 : roll<nat> . end,
                default end: 3 ->u 1 : win<bool> . 3 ->u 2 : win<bool> . end }
""")

P_DICE_ONCE = parse_process("""
  req a[3](s).
    if x1 <= 21 and x2 <= 21
    then (s[3,{1,2}]!w play. s[3,1]!u roll<roll(x1)>. s[3,2]!u roll<roll(x2)>. 0)
    else (s[3,{1,2}]!w end. s[3,1]!u win<x1 <= 21>. s[3,2]!u win<x2 <= 21>. 0)
| acc a[1](s). s[1,3]?w{ play: s[1,3]?u roll(x -> x). 0,
                         default end: s[1,3]?u win(false -> w). 0 }
| acc a[2](s). s[2,3]?w{ play: s[2,3]?u roll(x -> x). 0,
                         default end: s[2,3]?u win(false -> w). 0 }
""")

# -- the two sequential-inform weak-branch variants: the single-receiver
# one is not projectable (role 2 cannot reconcile the branches), the
# explicitly forked one is

G_DICE_SEQ_BAD = parse_global("""
rec t . 3 ->w {1} : {
  play: 3 ->u 1 : roll<nat> . 3 ->u 2 : roll<nat> . t,
  default end: 3 ->u 1 : win<bool> . 3 ->u 2 : win<bool> . end }
""")

G_DICE_SEQ_OK = parse_global("""
rec t . 3 ->w {1} : {
  play: 3 ->u 1 : roll<nat> .
        3 ->w {2} : { play: 3 ->u 2 : roll<nat> . t, default end: end },
  default end: 3 ->u 1 : win<bool> .
        3 ->w {2} : { play: end, default end: 3 ->u 2 : win<bool> . end } }
""")

# -- a small delegation protocol: the requester of session b hands its
# role over inside session a, and the receiver finishes b in its place

G_DELEG_MAIN = parse_global("2 ->r 1 : <<sb@2 : [1]!r<nat>. end>> . end")
G_DELEG_AUX = parse_global("2 ->r 1 : <nat> . end")

P_DELEG = parse_process("""
  req b[2](sb). req a[2](sa). sa[2,1]!<<sb@2>>. 0
| acc a[1](sa). sa[1,2]?((c@r)). c[r,1]!<5>. 0
| acc b[1](sb). sb[1,2]?(y). 0
""")


# ---------------------------------------------------------------------------
# environments and closed programs


def gamma_dice() -> GlobalEnv:
    return make_global_env(shared={"a": G_DICE},
                           values={"x1": sx.NAT, "x2": sx.NAT, "y": sx.NAT})


def gamma_dice_w() -> GlobalEnv:
    return make_global_env(shared={"a": G_DICE_W},
                           labels={"roll": sx.NAT, "win": sx.BOOL},
                           values={"x1": sx.NAT, "x2": sx.NAT, "x": sx.NAT})


def gamma_dice_u() -> GlobalEnv:
    return make_global_env(shared={"a": G_DICE_U},
                           labels={"roll": sx.NAT},
                           values={"x1": sx.NAT, "x2": sx.NAT, "x": sx.NAT})


def gamma_dice_once() -> GlobalEnv:
    return make_global_env(shared={"a": G_DICE_ONCE},
                           labels={"roll": sx.NAT, "win": sx.BOOL},
                           values={"x1": sx.NAT, "x2": sx.NAT, "x": sx.NAT})


def gamma_deleg() -> GlobalEnv:
    return make_global_env(shared={"a": G_DELEG_MAIN, "b": G_DELEG_AUX},
                           values={"y": sx.NAT})


def _close(p: sx.Process, sums) -> sx.Process:
    return sx.process_substitute(
        p, {name: sx.nat(v) for name, v in sums.items()})


def closed_dice(x1: int = 0, x2: int = 0) -> Program:
    """Runnable weakly reliable game; players start with last-known sum 0."""
    proc = _close(P_DICE, {"x1": x1, "x2": x2, "x": 0})
    return Program("dice-w", proc, gamma_closed(gamma_dice_w()))


def closed_dice_u(x1: int = 0, x2: int = 0) -> Program:
    proc = _close(P_DICE_U, {"x1": x1, "x2": x2, "x": 0})
    return Program("dice-u", proc, gamma_closed(gamma_dice_u()))


def closed_dice_r(x1: int = 30, x2: int = 30) -> Program:
    # sums above the threshold make the reliable dealer exit immediately;
    # below it the game loops forever (the sums never change)
    proc = _close(P_DICE_R, {"x1": x1, "x2": x2})
    return Program("dice-r", proc, gamma_closed(gamma_dice()))


def closed_dice_once(x1: int = 0, x2: int = 0) -> Program:
    proc = _close(P_DICE_ONCE, {"x1": x1, "x2": x2, "x": 0})
    return Program("dice-once", proc, gamma_closed(gamma_dice_once()))


def deleg_program() -> Program:
    return Program("deleg", P_DELEG, gamma_deleg())


def gamma_closed(gamma: GlobalEnv) -> GlobalEnv:
    """The closed programs substitute away the free value names, so the
    runtime environment only keeps shared channels and label sorts."""
    return GlobalEnv((), gamma.shared, gamma.label_sorts, ())
