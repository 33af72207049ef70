"""Timestamp-ordered construction of k-respecting candidate ranges.

Works on plaintext identifiers inside one bucket (or one group of
coalesced buckets). A range is ``(lo, hi]`` with ``None`` meaning an
unbounded end, so the "l + epsilon" lower bounds are exclusive bounds at
``l``.

Replay rules, for a bucket and a protection factor ``k``:

* elements are processed by ``(timestamp, id)``;
* the elements carrying the bucket's smallest timestamp are the initial
  population; sorted by value they are cut into runs of ``k`` (the last run
  absorbs the remainder), each run closing a range at its last value and the
  final range reaching the bucket's upper bound. Fewer than ``2k`` initial
  elements give a single range;
* every later element joins the range covering it; a range reaching ``2k``
  members is split after its ``k``-th smallest member.
"""

from __future__ import annotations

import bisect
from typing import Iterable, Optional

Bound = Optional[int]


class SplitReplay:
    """Mutable split state of one bucket group."""

    __slots__ = ("lo", "hi", "k", "uppers", "members")

    def __init__(self, lo: Bound, hi: Bound, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.lo = lo
        self.hi = hi
        self.k = k
        # uppers[i] closes range i; the last range closes at self.hi
        self.uppers: list[int] = []
        self.members: list[list[int]] = []

    def __len__(self) -> int:
        return sum(len(m) for m in self.members)

    def seed(self, initial: Iterable[int]) -> None:
        values = sorted(initial)
        k = self.k
        if len(values) < 2 * k:
            self.uppers = []
            self.members = [values]
            return
        runs = len(values) // k
        self.uppers = [values[(j + 1) * k - 1] for j in range(runs - 1)]
        self.members = [values[j * k : (j + 1) * k] for j in range(runs - 1)]
        self.members.append(values[(runs - 1) * k :])

    def add(self, value: int) -> None:
        if not self.members:
            self.seed([value])
            return
        i = bisect.bisect_left(self.uppers, value)
        bucket = self.members[i]
        bisect.insort(bucket, value)
        if len(bucket) >= 2 * self.k:
            cut = bucket[self.k - 1]
            self.uppers.insert(i, cut)
            self.members[i : i + 1] = [bucket[: self.k], bucket[self.k :]]

    def copy(self) -> SplitReplay:
        other = SplitReplay(self.lo, self.hi, self.k)
        other.uppers = list(self.uppers)
        other.members = [list(m) for m in self.members]
        return other

    def ranges(self) -> list[tuple[Bound, Bound, int]]:
        """``(lo_exclusive, hi_inclusive, count)`` for every range, in order."""
        if not self.members:
            return [(self.lo, self.hi, 0)]
        lows = [self.lo, *self.uppers]
        highs = [*self.uppers, self.hi]
        return [(lo, hi, len(m)) for lo, hi, m in zip(lows, highs, self.members)]


def replay(elements: Iterable[tuple[int, int]], lo: Bound, hi: Bound, k: int) -> SplitReplay:
    """Build the split state from ``(timestamp, id)`` pairs in one bucket."""
    ordered = sorted(elements)
    state = SplitReplay(lo, hi, k)
    if not ordered:
        return state
    t0 = ordered[0][0]
    cut = 0
    while cut < len(ordered) and ordered[cut][0] == t0:
        cut += 1
    state.seed(v for _, v in ordered[:cut])
    for _, v in ordered[cut:]:
        state.add(v)
    return state


class IncrementalReplay:
    """Split state maintained as insertions arrive (offline precomputation).

    Elements of the newest timestamp are held back until a later timestamp
    shows up, so that same-timestamp elements are applied in ascending id
    order no matter the order they were inserted in. The result is
    identical to :func:`replay` over the same elements.
    """

    __slots__ = ("committed", "pending", "pending_ts", "_view")

    def __init__(self, lo: Bound, hi: Bound, k: int):
        self.committed = SplitReplay(lo, hi, k)
        self.pending: list[int] = []
        self.pending_ts: int | None = None
        self._view: SplitReplay | None = None

    def add(self, ts: int, value: int) -> None:
        if self.pending_ts is not None and ts < self.pending_ts:
            raise ValueError("timestamps must be non-decreasing")
        if self.pending_ts is not None and ts > self.pending_ts:
            self.flush()
        self.pending_ts = ts
        bisect.insort(self.pending, value)
        self._view = None

    def flush(self) -> None:
        if not self.pending:
            return
        if len(self.committed) == 0:
            self.committed.seed(self.pending)
        else:
            for v in self.pending:
                self.committed.add(v)
        self.pending = []
        self._view = None

    def current(self) -> SplitReplay:
        if not self.pending:
            return self.committed
        if self._view is not None:
            return self._view
        state = self.committed.copy()
        if len(state) == 0:
            state.seed(self.pending)
        else:
            for v in self.pending:
                state.add(v)
        self._view = state
        return state
