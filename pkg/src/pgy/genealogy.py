"""Parent-link forest over the stages of a run.

Member i of stage s has parent ``parents[s][i]`` (0-based index into stage
s - 1).  Parent indices are nondecreasing because child windows are disjoint
and ordered like their parents.  Everything here is read-only array work on
those maps; member values are only loaded when a report needs them.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .engine import CheckpointDir, StageState, VariantRule, run, seed
from .ntcore import nth_prime, primorial

__all__ = [
    "GenealogyForest",
    "NotFound",
    "Tuplet",
    "BranchGroup",
    "BranchBound",
    "survivors",
    "surviving_children",
    "branch_y_offsets",
    "common_ancestor",
    "find_tuplets",
    "descendants_of_order",
    "branch_strength",
    "branch_bound_c",
    "no_split_stages",
    "table7_csv",
]


class NotFound(LookupError):
    """Nothing matching up to the forest's horizon."""


@dataclass
class GenealogyForest:
    parents: dict[int, np.ndarray]
    counts: dict[int, int]
    first: int
    horizon: int
    loader: Callable[[int], tuple[int, ...]] | None = None
    _values: dict = field(default_factory=dict, repr=False)
    _alive: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for s in range(self.first + 1, self.horizon + 1):
            par = self.parents[s]
            if len(par) != self.counts[s]:
                raise ValueError(f"stage {s}: parent map size {len(par)} != n = {self.counts[s]}")
            if len(par) and (par.min() < 0 or par.max() >= self.counts[s - 1]):
                raise ValueError(f"stage {s}: parent index out of range")
            if np.any(np.diff(par) < 0):
                raise ValueError(f"stage {s}: parent indices not nondecreasing")

    # -- construction -------------------------------------------------------

    @classmethod
    def from_run(cls, state: StageState | None = None, to_stage: int = 60, **kw) -> "GenealogyForest":
        """Run the engine in memory, keeping values and parent maps."""
        state = state or seed(VariantRule.floor())
        values = {state.s: state.values}
        parents: dict[int, np.ndarray] = {}

        def sink(res, _elapsed):
            values[res.state.s] = res.state.values
            parents[res.state.s] = np.asarray(res.parents, dtype=np.int64)

        out = run(state, to_stage, sink=sink, **kw)
        horizon = out.state.s
        counts = {s: len(v) for s, v in values.items() if s <= horizon}
        forest = cls({s: p for s, p in parents.items() if s <= horizon}, counts, state.s, horizon)
        forest._values.update({s: v for s, v in values.items() if s <= horizon})
        return forest

    @classmethod
    def from_dir(cls, path, horizon: int | None = None) -> "GenealogyForest":
        """Load parent maps written by :class:`CheckpointDir`."""
        ck = CheckpointDir(path)
        stages = ck.stages()
        if not stages:
            raise FileNotFoundError(f"no checkpoints in {path}")
        first = stages[0]
        last = stages[-1] if horizon is None else horizon
        if last not in stages:
            raise FileNotFoundError(f"stage {last} not checkpointed")
        parents = {s: ck.load_parents(s) for s in range(first + 1, last + 1)}
        counts = {first: ck.load(first).n}
        counts.update({s: len(p) for s, p in parents.items()})
        return cls(parents, counts, first, last, loader=lambda s: ck.load(s).values)

    # -- basic access -------------------------------------------------------

    def n(self, s: int) -> int:
        return self.counts[s]

    def values(self, s: int) -> tuple[int, ...]:
        if s not in self._values:
            if self.loader is None:
                raise KeyError(f"values of stage {s} unavailable")
            self._values[s] = self.loader(s)
        return self._values[s]

    def _check(self, *stages: int):
        for s in stages:
            if not self.first <= s <= self.horizon:
                raise ValueError(f"stage {s} outside [{self.first}, {self.horizon}]")

    def ancestor_index(self, s: int, idx, r: int):
        """Index (or array of indices) at stage r <= s of the ancestor of ``idx``."""
        self._check(s, r)
        if r > s:
            raise ValueError("ancestor stage after member stage")
        out = idx
        for t in range(s, r, -1):
            out = self.parents[t][out]
        return out

    def children_of(self, s: int, idx: int) -> range:
        """Indices at stage s + 1 of the children of member ``idx`` of stage s."""
        par = self.parents[s + 1]
        lo = int(np.searchsorted(par, idx, side="left"))
        hi = int(np.searchsorted(par, idx, side="right"))
        return range(lo, hi)

    def alive(self, s: int, horizon: int | None = None) -> np.ndarray:
        """Mask of stage-s members with a descendant at ``horizon``."""
        horizon = self.horizon if horizon is None else horizon
        self._check(s, horizon)
        if s > horizon:
            raise ValueError("stage after horizon")
        key = (s, horizon)
        if key not in self._alive:
            if s == horizon:
                mask = np.ones(self.counts[s], dtype=bool)
            else:
                nxt = self.alive(s + 1, horizon)
                mask = np.zeros(self.counts[s], dtype=bool)
                mask[self.parents[s + 1][nxt]] = True
            self._alive[key] = mask
        return self._alive[key]


# ---------------------------------------------------------------------------
# analytics


def survivors(forest: GenealogyForest, s: int, horizon: int | None = None) -> int:
    return int(forest.alive(s, horizon).sum())


def common_ancestor(forest: GenealogyForest, s_from: int | None = None, horizon: int | None = None):
    """(stage, value) of the deepest stage where every horizon member has the
    same ancestor, searching stages >= s_from; None if there is none."""
    horizon = forest.horizon if horizon is None else horizon
    s_from = forest.first if s_from is None else s_from
    best = None
    for s in range(s_from, horizon + 1):
        if survivors(forest, s, horizon) == 1:
            best = s
        else:
            break
    if best is None:
        return None
    idx = int(np.flatnonzero(forest.alive(best, horizon))[0])
    return best, forest.values(best)[idx]


@dataclass(frozen=True)
class Tuplet:
    stage: int  # parent stage
    ordinal: int  # 1-based parent ordinal
    multiplier: tuple[int, ...]  # primes the parent is multiplied by
    offsets: tuple[int, ...]

    def __str__(self) -> str:
        mult = "*".join(str(p) for p in self.multiplier)
        return f"({_ordinal(self.ordinal)} prime of s = {self.stage})*{mult} + {{{', '.join(map(str, self.offsets))}}}"


def _ordinal(i: int) -> str:
    suffix = "th" if 10 <= i % 100 <= 20 else {1: "st", 2: "nd", 3: "rd"}.get(i % 10, "th")
    return f"{i}{suffix}"


def find_tuplets(forest: GenealogyForest, size: int) -> Tuplet:
    """First parent (stage, then ordinal) with at least ``size`` children."""
    if size < 2:
        raise ValueError("size must be >= 2")
    for s in range(forest.first + 1, forest.horizon + 1):
        cnt = np.bincount(forest.parents[s], minlength=forest.counts[s - 1])
        hits = np.flatnonzero(cnt >= size)
        if len(hits):
            i = int(hits[0])
            P = nth_prime(s)
            q = forest.values(s - 1)[i]
            kids = forest.values(s)
            offs = tuple(kids[j] - q * P for j in forest.children_of(s - 1, i))
            return Tuplet(s - 1, i + 1, (P,), offs)
    raise NotFound(f"no {size}-tuplet up to stage {forest.horizon}")


def descendants_of_order(forest: GenealogyForest, order: int, count: int) -> Tuplet:
    """First member (stage, then ordinal) with exactly ``count`` descendants
    ``order`` stages later."""
    if order < 2 or count < 2:
        raise ValueError("order and count must be >= 2")
    for s in range(forest.first, forest.horizon - order + 1):
        anc = forest.ancestor_index(s + order, np.arange(forest.counts[s + order]), s)
        cnt = np.bincount(anc, minlength=forest.counts[s])
        hits = np.flatnonzero(cnt == count)
        if len(hits):
            i = int(hits[0])
            mult = tuple(nth_prime(s + j) for j in range(1, order + 1))
            base = forest.values(s)[i] * math.prod(mult)
            vals = forest.values(s + order)
            offs = tuple(vals[j] - base for j in np.flatnonzero(anc == i).tolist())
            return Tuplet(s, i + 1, mult, offs)
    raise NotFound(f"no member with {count} order-{order} descendants up to stage {forest.horizon}")


@dataclass(frozen=True)
class BranchGroup:
    ordinal: int  # 1-based ordinal of the split-stage ancestor
    size: int
    percent: float


def branch_strength(forest: GenealogyForest, split_stage: int, horizon: int | None = None) -> list[BranchGroup]:
    """Horizon members grouped by their split-stage ancestor."""
    horizon = forest.horizon if horizon is None else horizon
    if split_stage >= horizon:
        raise ValueError("split stage must precede the horizon")
    anc = forest.ancestor_index(horizon, np.arange(forest.counts[horizon]), split_stage)
    cnt = np.bincount(anc, minlength=forest.counts[split_stage])
    total = int(cnt.sum())
    return [BranchGroup(int(i) + 1, int(cnt[i]), 100.0 * cnt[i] / total) for i in np.flatnonzero(cnt)]


def branch_y_offsets(forest: GenealogyForest, s: int, horizon: int | None = None) -> list[tuple[int, Fraction]]:
    """Lowest admissible y of each surviving stage-s branch, relative to the first.

    Each surviving member of stage s gets q_min / p_h# - y_0, where q_min is
    its smallest descendant at the horizon h and y_0 the same quantity for the
    lowest surviving member.  Returns (member index, offset) pairs.
    """
    horizon = forest.horizon if horizon is None else horizon
    anc = forest.ancestor_index(horizon, np.arange(forest.counts[horizon]), s)
    first = {}
    for j, a in enumerate(anc.tolist()):
        first.setdefault(a, j)
    vals = forest.values(horizon)
    m = primorial(nth_prime(horizon))
    idx = sorted(first)
    q0 = vals[first[idx[0]]]
    return [(i, Fraction(vals[first[i]] - q0, m)) for i in idx]


def surviving_children(forest: GenealogyForest, s: int, idx: int, horizon: int | None = None) -> list[int]:
    """Indices of the children of member ``idx`` (stage s) that reach the horizon."""
    mask = forest.alive(s + 1, horizon)
    return [j for j in forest.children_of(s, idx) if mask[j]]


@dataclass(frozen=True)
class BranchBound:
    c: float
    root_stage: int | None = None
    root_ordinal: int | None = None
    peak_stage: int | None = None
    peak_size: int = 0
    extinct_at: int | None = None


def branch_bound_c(forest: GenealogyForest, horizon: int | None = None) -> BranchBound:
    """Largest n_b(s) / (sqrt(p_s) log(p_s) / 2) over branches dying before the horizon.

    A branch is rooted at a member without descendants at the horizon whose
    parent does have some; n_b(s) counts its members at stage s.
    """
    horizon = forest.horizon if horizon is None else horizon
    best = BranchBound(0.0)
    labels = None  # label per member of the current stage, -1 when alive
    roots: list[tuple[int, int]] = []
    last_seen: dict[int, int] = {}
    peak: dict[int, tuple[float, int, int]] = {}
    for s in range(forest.first, horizon + 1):
        alive = forest.alive(s, horizon)
        n = forest.counts[s]
        new = np.full(n, -1, dtype=np.int64)
        if labels is not None:
            inherited = labels[forest.parents[s]]
            new[:] = inherited
        fresh = np.flatnonzero(~alive & (new < 0))
        for i in fresh.tolist():
            new[i] = len(roots)
            roots.append((s, i))
        labels = new
        dead = labels[labels >= 0]
        if len(dead) == 0:
            continue
        p = nth_prime(s)
        norm = 0.5 * math.sqrt(p) * math.log(p)
        ids, cnt = np.unique(dead, return_counts=True)
        for lab, c in zip(ids.tolist(), cnt.tolist()):
            last_seen[lab] = s
            v = c / norm
            if lab not in peak or v > peak[lab][0]:
                peak[lab] = (v, s, c)
    for lab, (v, s_peak, size) in peak.items():
        if v > best.c:
            rs, ri = roots[lab]
            best = BranchBound(v, rs, ri + 1, s_peak, size, last_seen[lab] + 1)
    return best


def no_split_stages(forest: GenealogyForest, horizon: int | None = None, s_min: int | None = None) -> list[int]:
    """Stages s > s_min where the surviving count does not grow."""
    horizon = forest.horizon if horizon is None else horizon
    s_min = forest.first if s_min is None else s_min
    return [
        s
        for s in range(s_min + 1, horizon + 1)
        if survivors(forest, s, horizon) == survivors(forest, s - 1, horizon)
    ]


def table7_csv(forest: GenealogyForest, horizon: int | None = None) -> str:
    """``s,p,n,n_star`` with n_star taken at the given horizon."""
    horizon = forest.horizon if horizon is None else horizon
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "p", "n", "n_star"])
    for s in range(forest.first, horizon + 1):
        w.writerow([s, nth_prime(s), forest.counts[s], survivors(forest, s, horizon)])
    return buf.getvalue()
