"""Intervals over the ciphertext order.

Bounds are integers or ``None`` for an unbounded end. Inclusivity flags are
kept as given (an exclusive lower bound at ``l`` is how "l + epsilon" is
written), but every comparison goes through the integer-normalized closed
form so gaps in the ciphertext image never matter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import EmptyRangeError

Bound = Optional[int]


@dataclass(frozen=True)
class IdRange:
    lo: Bound = None
    hi: Bound = None
    lo_inclusive: bool = False
    hi_inclusive: bool = True

    def __post_init__(self):
        if self.is_empty():
            raise EmptyRangeError(f"empty range {self}")

    @classmethod
    def full(cls) -> IdRange:
        return cls(None, None, False, False)

    @classmethod
    def at_most(cls, hi: int) -> IdRange:
        return cls(None, hi, False, True)

    @classmethod
    def above(cls, lo: int) -> IdRange:
        return cls(lo, None, False, False)

    @classmethod
    def closed(cls, lo: Bound, hi: Bound) -> IdRange:
        return cls(lo, hi, lo is not None, hi is not None)

    @classmethod
    def point(cls, value: int) -> IdRange:
        return cls(value, value, True, True)

    # closed integer form; None stands for -inf / +inf
    @property
    def first(self) -> Bound:
        if self.lo is None:
            return None
        return self.lo if self.lo_inclusive else self.lo + 1

    @property
    def last(self) -> Bound:
        if self.hi is None:
            return None
        return self.hi if self.hi_inclusive else self.hi - 1

    def is_empty(self) -> bool:
        first, last = self.first, self.last
        return first is not None and last is not None and first > last

    def __contains__(self, value: int) -> bool:
        first, last = self.first, self.last
        return (first is None or value >= first) and (last is None or value <= last)

    def issubset(self, other: IdRange) -> bool:
        return _ge_lo(self.first, other.first) and _le_hi(self.last, other.last)

    def overlaps(self, other: IdRange) -> bool:
        return self.intersection(other) is not None

    def intersection(self, other: IdRange) -> IdRange | None:
        lo_src = self if _ge_lo(self.first, other.first) else other
        hi_src = self if _le_hi(self.last, other.last) else other
        first, last = lo_src.first, hi_src.last
        if first is not None and last is not None and first > last:
            return None
        return IdRange(lo_src.lo, hi_src.hi, lo_src.lo_inclusive, hi_src.hi_inclusive)

    def hull(self, other: IdRange) -> IdRange:
        """Smallest range covering both (assumes they abut or overlap)."""
        lo_src = other if _ge_lo(self.first, other.first) else self
        hi_src = other if _le_hi(self.last, other.last) else self
        return IdRange(lo_src.lo, hi_src.hi, lo_src.lo_inclusive, hi_src.hi_inclusive)

    def bounds(self) -> tuple:
        return (self.lo, self.hi, self.lo_inclusive, self.hi_inclusive)

    def __str__(self) -> str:
        left = "-inf" if self.lo is None else str(self.lo)
        right = "+inf" if self.hi is None else str(self.hi)
        return f"{'[' if self.lo_inclusive else '('}{left}, {right}{']' if self.hi_inclusive else ')'}"


def _ge_lo(a: Bound, b: Bound) -> bool:
    # lower bound a is at least as tight as b
    if b is None:
        return True
    if a is None:
        return False
    return a >= b


def _le_hi(a: Bound, b: Bound) -> bool:
    if b is None:
        return True
    if a is None:
        return False
    return a <= b


@dataclass(frozen=True)
class CandidateRange:
    range: IdRange
    count: int

    @property
    def lo(self) -> Bound:
        return self.range.lo

    @property
    def hi(self) -> Bound:
        return self.range.hi

    @property
    def lo_inclusive(self) -> bool:
        return self.range.lo_inclusive

    @property
    def hi_inclusive(self) -> bool:
        return self.range.hi_inclusive

    def __contains__(self, value: int) -> bool:
        return value in self.range


@dataclass(frozen=True)
class Bucket:
    lo: Bound
    hi: Bound
    ranges: tuple[CandidateRange, ...] = ()

    @property
    def range(self) -> IdRange:
        return IdRange(self.lo, self.hi, False, self.hi is not None)
