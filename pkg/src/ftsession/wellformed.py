"""Well-formedness checks for global and local types.

Global conditions:
  1. no free or unguarded type variables,
  2. roles form a dense range 1..n,
  3. no self-communication,
  4. branching sanity: distinct endpoints, sender outside the receiver set,
     default label present, branch labels pairwise distinct under label
     compatibility,
  5. parallel parts use disjoint role sets.

Local conditions: (1) as above and (2) the branching-label part of (4).
Violations are collected, never raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import syntax as sx
from .syntax import labels_compatible


@dataclass(frozen=True)
class Violation:
    path: tuple
    condition: int
    message: str

    def __str__(self):
        loc = "/".join(str(p) for p in self.path) or "<root>"
        return f"condition {self.condition} at {loc}: {self.message}"


@dataclass
class WfReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, path, condition, message):
        self.violations.append(Violation(tuple(path), condition, message))

    def __str__(self):
        if self.ok:
            return "well-formed"
        return "\n".join(str(v) for v in self.violations)


def _check_label_distinct(branches, path, condition, report):
    labs = [lab for lab, _ in branches]
    for i in range(len(labs)):
        for j in range(i + 1, len(labs)):
            if labels_compatible(labs[i], labs[j]):
                report.add(path, condition,
                           f"branch labels {labs[i]} and {labs[j]} are not distinct")


def check_global_wf(g: sx.GlobalType) -> WfReport:
    report = WfReport()

    roles = sx.roles_of(g)
    if roles:
        expected = frozenset(range(1, len(roles) + 1))
        if roles != expected:
            missing = sorted(expected - roles)
            report.add((), 2,
                       f"roles {sorted(roles)} do not form 1..{len(roles)}"
                       + (f" (missing {missing})" if missing else ""))

    def walk(t, path, bound, guarded_vars):
        # guarded_vars: recursion variables already protected by a prefix
        if isinstance(t, sx.GVar):
            if t.var not in bound:
                report.add(path, 1, f"free type variable {t.var!r}")
            elif t.var not in guarded_vars:
                report.add(path, 1, f"unguarded type variable {t.var!r}")
            return
        if isinstance(t, sx.GEnd):
            return
        if isinstance(t, sx.GRec):
            walk(t.body, path + ("rec",), bound | {t.var}, guarded_vars)
            return
        if isinstance(t, (sx.GComR, sx.GComU)):
            if t.src == t.dst:
                report.add(path, 3, f"self-communication by role {t.src}")
            walk(t.cont, path + ("cont",), bound, bound)
            return
        if isinstance(t, sx.GDeleg):
            if t.src == t.dst:
                report.add(path, 3, f"self-delegation by role {t.src}")
            walk(t.cont, path + ("cont",), bound, bound)
            return
        if isinstance(t, sx.GBranR):
            if t.src == t.dst:
                report.add(path, 4, f"self-branching by role {t.src}")
            _check_label_distinct(t.branches, path, 4, report)
            for lab, gi in t.branches:
                walk(gi, path + (str(lab),), bound, bound)
            return
        if isinstance(t, sx.GBranW):
            if t.src in t.receivers:
                report.add(path, 4,
                           f"sender {t.src} occurs in its receiver set")
            if not any(labels_compatible(t.default, lab) for lab, _ in t.branches):
                report.add(path, 4, f"default label {t.default} not among branches")
            _check_label_distinct(t.branches, path, 4, report)
            for lab, gi in t.branches:
                walk(gi, path + (str(lab),), bound, bound)
            return
        if isinstance(t, sx.GPar):
            shared = sx.roles_of(t.left) & sx.roles_of(t.right)
            if shared:
                report.add(path, 5,
                           f"roles {sorted(shared)} occur on both sides of |")
            walk(t.left, path + ("left",), bound, guarded_vars)
            walk(t.right, path + ("right",), bound, guarded_vars)
            return
        raise TypeError(f"not a global type: {t!r}")

    walk(g, (), frozenset(), frozenset())
    return report


def check_local_wf(l: sx.LocalType) -> WfReport:
    report = WfReport()

    def walk(t, path, bound, guarded_vars):
        if isinstance(t, sx.LVar):
            if t.var not in bound:
                report.add(path, 1, f"free type variable {t.var!r}")
            elif t.var not in guarded_vars:
                report.add(path, 1, f"unguarded type variable {t.var!r}")
            return
        if isinstance(t, sx.LEnd):
            return
        if isinstance(t, sx.LRec):
            walk(t.body, path + ("rec",), bound | {t.var}, guarded_vars)
            return
        if isinstance(t, (sx.LSendR, sx.LGetR, sx.LSendU, sx.LGetU,
                          sx.LDelegOut, sx.LDelegIn)):
            walk(t.cont, path + ("cont",), bound, bound)
            return
        if isinstance(t, (sx.LSelR, sx.LBranR, sx.LSelW)):
            _check_label_distinct(t.branches, path, 2, report)
            for lab, li in t.branches:
                walk(li, path + (str(lab),), bound, bound)
            return
        if isinstance(t, sx.LBranW):
            if not any(labels_compatible(t.default, lab) for lab, _ in t.branches):
                report.add(path, 2, f"default label {t.default} not among branches")
            _check_label_distinct(t.branches, path, 2, report)
            for lab, li in t.branches:
                walk(li, path + (str(lab),), bound, bound)
            return
        raise TypeError(f"not a local type: {t!r}")

    walk(l, (), frozenset(), frozenset())
    return report
