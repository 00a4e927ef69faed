"""Projection of global types onto per-role local types.

Projection is partial: it fails when the merge of branch continuations for
an uninvolved role is undefined, or when a role occurs on both sides of a
parallel composition.  Failures carry the deepest conflicting pair.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import syntax as sx
from .pretty import pretty_local
from .syntax import labels_compatible, unreliable_only


class MergeUndefined(Exception):
    def __init__(self, left, right, path=()):
        self.left = left
        self.right = right
        self.path = tuple(path)
        super().__init__(
            f"cannot merge {pretty_local(left)} with {pretty_local(right)}"
            + (f" at {'/'.join(map(str, self.path))}" if self.path else ""))


@dataclass
class NotProjectable(Exception):
    role: int
    path: tuple
    cause: str  # "merge-failure" | "par-both-sides"
    detail: str = ""

    def __str__(self):
        loc = "/".join(str(p) for p in self.path) or "<root>"
        return (f"global type is not projectable for role {self.role} "
                f"at {loc}: {self.cause}"
                + (f" ({self.detail})" if self.detail else ""))


def _merge_branches(b1, b2, path):
    """Pointwise union of branch maps; same-label continuations are merged
    recursively, other labels are kept as-is."""
    out = list(b1)
    for lab, lt in b2:
        hit = None
        for i, (lab1, lt1) in enumerate(out):
            if labels_compatible(lab1, lab):
                hit = i
                break
        if hit is None:
            out.append((lab, lt))
        else:
            out[hit] = (out[hit][0], merge(out[hit][1], lt, path + (str(lab),)))
    return tuple(out)


def merge(a: sx.LocalType, b: sx.LocalType, path=()) -> sx.LocalType:
    """The partial join of local types: identical types join to themselves,
    branchings of the same kind and peer join their branch sets (weak ones
    only with the same default branch).

    One extension beyond the inductive clauses: end absorbs into a local
    type whose remaining prefixes are all unreliable or weak, since such a
    participant can drift to termination through skips alone.  This is what
    accepts the subsequent-inform weak-branching protocols whose extra
    branches end one receiver early.
    """
    if a == b:
        return a
    if isinstance(a, sx.LEnd) and unreliable_only(b):
        return b
    if isinstance(b, sx.LEnd) and unreliable_only(a):
        return a
    if isinstance(a, sx.LBranR) and isinstance(b, sx.LBranR) and a.peer == b.peer:
        return sx.LBranR(a.peer, _merge_branches(a.branches, b.branches, path))
    if isinstance(a, sx.LBranW) and isinstance(b, sx.LBranW) and a.peer == b.peer:
        if not labels_compatible(a.default, b.default):
            raise MergeUndefined(a, b, path)
        return sx.LBranW(a.peer, _merge_branches(a.branches, b.branches, path),
                         a.default)
    raise MergeUndefined(a, b, path)


def project(g: sx.GlobalType, p: int) -> sx.LocalType:
    """Project a well-formed global type onto role p."""

    def go(t, path):
        if isinstance(t, sx.GComR):
            if p == t.src:
                return sx.LSendR(t.dst, t.sort, go(t.cont, path + ("cont",)))
            if p == t.dst:
                return sx.LGetR(t.src, t.sort, go(t.cont, path + ("cont",)))
            return go(t.cont, path + ("cont",))
        if isinstance(t, sx.GComU):
            if p == t.src:
                return sx.LSendU(t.dst, t.label, t.sort, go(t.cont, path + ("cont",)))
            if p == t.dst:
                return sx.LGetU(t.src, t.label, t.sort, go(t.cont, path + ("cont",)))
            return go(t.cont, path + ("cont",))
        if isinstance(t, sx.GBranR):
            if p == t.src:
                return sx.LSelR(t.dst, tuple((lab, go(gi, path + (str(lab),)))
                                             for lab, gi in t.branches))
            if p == t.dst:
                return sx.LBranR(t.src, tuple((lab, go(gi, path + (str(lab),)))
                                              for lab, gi in t.branches))
            return _merge_all(t.branches, path)
        if isinstance(t, sx.GBranW):
            if p == t.src:
                return sx.LSelW(t.receivers,
                                tuple((lab, go(gi, path + (str(lab),)))
                                      for lab, gi in t.branches))
            if p in t.receivers:
                return sx.LBranW(t.src,
                                 tuple((lab, go(gi, path + (str(lab),)))
                                       for lab, gi in t.branches),
                                 t.default)
            return _merge_all(t.branches, path)
        if isinstance(t, sx.GDeleg):
            if p == t.src:
                return sx.LDelegOut(t.dst, t.chan, t.role, t.ltype,
                                    go(t.cont, path + ("cont",)))
            if p == t.dst:
                return sx.LDelegIn(t.src, t.chan, t.role, t.ltype,
                                   go(t.cont, path + ("cont",)))
            return go(t.cont, path + ("cont",))
        if isinstance(t, sx.GPar):
            in_left = p in sx.roles_of(t.left)
            in_right = p in sx.roles_of(t.right)
            if in_left and in_right:
                raise NotProjectable(p, path, "par-both-sides")
            if in_left:
                return go(t.left, path + ("left",))
            if in_right:
                return go(t.right, path + ("right",))
            return sx.L_END
        if isinstance(t, sx.GRec):
            if not sx.gvar_occurs(t.var, t.body):
                return go(t.body, path + ("rec",))
            if p in sx.roles_of(t.body):
                return sx.LRec(t.var, go(t.body, path + ("rec",)))
            return sx.L_END
        if isinstance(t, sx.GVar):
            return sx.LVar(t.var)
        if isinstance(t, sx.GEnd):
            return sx.L_END
        raise TypeError(f"not a global type: {t!r}")

    def _merge_all(branches, path):
        acc = None
        for lab, gi in branches:
            li = go(gi, path + (str(lab),))
            if acc is None:
                acc = li
            else:
                try:
                    acc = merge(acc, li, path)
                except MergeUndefined as e:
                    raise NotProjectable(p, e.path or path, "merge-failure",
                                         detail=str(e)) from e
        return acc if acc is not None else sx.L_END

    return go(g, ())


def project_all(g: sx.GlobalType) -> dict:
    """Projection for every role of g; raises the first NotProjectable."""
    return {r: project(g, r) for r in sorted(sx.roles_of(g))}
