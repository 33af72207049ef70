"""A data service's timestamped, tombstone-preserving dataset.

Entries are keyed by plaintext identifier (the store belongs to the service,
which can decrypt); everything that leaves the store is expressed in
ciphertexts under the store's key. Deleted entries become tombstones: they
keep their identifier and timestamp, still count toward selectivity and
candidate ranges, and never show up in query results.
"""

from __future__ import annotations

import bisect
import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping

from . import opes
from .candidates import IncrementalReplay, SplitReplay, replay
from .errors import (
    DuplicateIdError,
    EmptyRangeError,
    InvalidPolicyError,
    NotFoundError,
)
from .opes import EncryptedId, OpesKey
from .ranges import Bucket, CandidateRange, IdRange

Attrs = Mapping[str, str]


@dataclass(frozen=True)
class StoreEntry:
    id: EncryptedId
    plain_id: int
    attrs: Mapping[str, str]
    ts: int
    tombstone: bool = False


@dataclass(frozen=True)
class BucketPolicy:
    """``fixed_count``: ``size`` stored ids per bucket; ``equal_width``:
    ``size`` buckets of equal plaintext width; ``whole``: one bucket."""

    kind: str = "fixed_count"
    size: int = 50

    def __post_init__(self):
        if self.kind not in ("fixed_count", "equal_width", "whole"):
            raise InvalidPolicyError(f"unknown bucket policy {self.kind!r}")
        if self.kind != "whole" and self.size < 1:
            raise InvalidPolicyError(f"bucket size must be >= 1, got {self.size}")

    @classmethod
    def fixed_count(cls, size: int) -> BucketPolicy:
        return cls("fixed_count", size)

    @classmethod
    def equal_width(cls, buckets: int) -> BucketPolicy:
        return cls("equal_width", buckets)

    @classmethod
    def whole(cls) -> BucketPolicy:
        return cls("whole", 1)


DEFAULT_POLICY = BucketPolicy.fixed_count(50)


class _RWLock:
    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = False

    @contextmanager
    def read(self) -> Iterator[None]:
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def write(self) -> Iterator[None]:
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


class TimestampedStore:
    """Records plus tombstones, bucket boundaries and candidate-range state.

    Reads may run concurrently; inserts and deletes are serialized against
    everything else.
    """

    def __init__(self, key: OpesKey):
        self.key = key
        self._scheme = opes.scheme_for(key)
        self.entries: dict[int, StoreEntry] = {}
        self.next_ts = 0
        self.version = 0
        self.log: list[str] = []
        self._plain: list[int] = []  # sorted plaintext ids, tombstones included
        self._cipher: list[int] = []  # ciphertexts of _plain, same order
        self._bounds: list[int] = []  # plaintext upper bounds of all but the last bucket
        self.policy: BucketPolicy | None = None
        self._offline: dict[int, dict[tuple, IncrementalReplay]] = {}
        self._lock = _RWLock()
        self._offline_lock = threading.Lock()
        self._group_memo: dict[int, tuple] = {}

    # -- mutation -----------------------------------------------------

    def insert(self, plain_id: int, attrs: Attrs | None = None) -> int:
        plain_id = int(plain_id)
        attrs = dict(attrs or {})
        with self._lock.write():
            if plain_id in self.entries:
                raise DuplicateIdError(f"id {plain_id} already stored")
            cipher = self._scheme.encrypt(plain_id)  # out-of-domain ids raise here
            ts = self.next_ts
            self.entries[plain_id] = StoreEntry(cipher, plain_id, attrs, ts)
            pos = bisect.bisect_left(self._plain, plain_id)
            self._plain.insert(pos, plain_id)
            self._cipher.insert(pos, cipher)
            for states in self._offline.values():
                for (lo, hi), state in states.items():
                    if (lo is None or plain_id > lo) and (hi is None or plain_id <= hi):
                        state.add(ts, plain_id)
            self.version += 1
            self.log.append(f"INS {plain_id} {ts} {_format_attrs(attrs)}")
            return ts

    def delete(self, plain_id: int) -> int:
        plain_id = int(plain_id)
        with self._lock.write():
            entry = self.entries.get(plain_id)
            if entry is None or entry.tombstone:
                raise NotFoundError(f"no live entry for id {plain_id}")
            self.entries[plain_id] = replace(entry, tombstone=True, attrs={})
            self.version += 1
            self.log.append(f"DEL {plain_id} {self.next_ts}")
            return self.next_ts

    def advance_clock(self, ticks: int = 1) -> int:
        """Close the current insertion batch; later inserts get a larger timestamp."""
        with self._lock.write():
            self.next_ts += ticks
            for states in self._offline.values():
                for state in states.values():
                    state.flush()
            return self.next_ts

    def _set_clock(self, ts: int) -> None:
        if ts < self.next_ts:
            raise ValueError(f"event log goes back in time ({ts} < {self.next_ts})")
        if ts > self.next_ts:
            self.advance_clock(ts - self.next_ts)

    # -- reads ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self._plain)

    def encrypt(self, plain_id: int) -> EncryptedId:
        return self._scheme.encrypt(plain_id)

    def decrypt(self, cipher: int) -> int:
        return self._scheme.decrypt(cipher)

    def _span(self, rng: IdRange) -> tuple[int, int]:
        first, last = rng.first, rng.last
        i = 0 if first is None else bisect.bisect_left(self._cipher, first)
        j = len(self._cipher) if last is None else bisect.bisect_right(self._cipher, last)
        return i, max(i, j)

    def selectivity(self, rng: IdRange) -> int:
        """Distinct identifiers (tombstones included) whose ciphertext is in ``rng``."""
        with self._lock.read():
            i, j = self._span(rng)
            return j - i

    def median(self, rng: IdRange) -> EncryptedId:
        """Ciphertext of the ``ceil(n/2)``-th smallest identifier in ``rng``."""
        with self._lock.read():
            i, j = self._span(rng)
            n = j - i
            if n == 0:
                raise EmptyRangeError(f"no identifiers in {rng}")
            return EncryptedId(self._cipher[i + (n + 1) // 2 - 1])

    def domain_midpoint(self, rng: IdRange) -> EncryptedId | None:
        """Ciphertext of the middle plaintext of the domain values inside ``rng``."""
        d = self.key.domain_size
        enc = self._scheme.encrypt
        first, last = rng.first, rng.last
        a = 0 if first is None else bisect.bisect_left(range(d), first, key=enc)
        b = d - 1 if last is None else bisect.bisect_right(range(d), last, key=enc) - 1
        if a > b:
            return None
        return enc((a + b + 1) // 2)

    def query(
        self, rng: IdRange, sanitize: Callable[[dict], dict] | None = None
    ) -> list[tuple[EncryptedId, dict]]:
        """Live tuples whose ciphertext lies in ``rng``, ascending by id."""
        with self._lock.read():
            i, j = self._span(rng)
            out = []
            for pid in self._plain[i:j]:
                entry = self.entries[pid]
                if entry.tombstone:
                    continue
                attrs = dict(entry.attrs)
                if sanitize is not None:
                    attrs = sanitize(attrs)
                out.append((entry.id, attrs))
            return out

    def live_ids(self) -> list[int]:
        return [pid for pid in self._plain if not self.entries[pid].tombstone]

    # -- buckets and candidate ranges -------------------------------------

    def partition_buckets(self, policy: BucketPolicy = DEFAULT_POLICY) -> list[Bucket]:
        """Fix bucket boundaries from the identifiers stored right now.

        Boundaries are frozen afterwards: later insertions fall into the
        existing buckets.
        """
        with self._lock.write():
            if policy.kind == "whole":
                bounds = []
            elif policy.kind == "fixed_count":
                n = len(self._plain)
                bounds = [self._plain[j - 1] for j in range(policy.size, n, policy.size)]
            else:
                d, m = self.key.domain_size, policy.size
                bounds = sorted({(j * d) // m for j in range(1, m)} - {0})
                bounds = [b for b in bounds if b < d]
            self._bounds = bounds
            self.policy = policy
            self._offline.clear()
            self._group_memo.clear()
        return self.buckets()

    def buckets(self, k: int | None = None) -> list[Bucket]:
        with self._lock.read():
            out = []
            lows = [None, *self._bounds]
            highs = [*self._bounds, None]
            for lo, hi in zip(lows, highs):
                ranges: tuple = ()
                if k is not None:
                    state = self._replay_for(lo, hi, k)
                    ranges = tuple(self._to_candidate(r) for r in state.ranges())
                out.append(Bucket(self._enc(lo), self._enc(hi), ranges))
            return out

    def _enc(self, plain: int | None) -> int | None:
        return None if plain is None else self._scheme.encrypt(plain)

    def bucket_groups(self, k: int) -> list[tuple[int | None, int | None]]:
        """Consecutive buckets merged until each group holds ``k`` join-time ids.

        Grouping looks only at the entries carrying the smallest timestamp
        (the population present when the service joined), so later
        insertions never regroup buckets. A short tail is folded into the
        last complete group.
        """
        memo = self._group_memo.get(k)
        if memo is not None and memo[0] == (self.version, len(self._bounds)):
            return memo[1]
        lows = [None, *self._bounds]
        highs = [*self._bounds, None]
        join_ts = min((e.ts for e in self.entries.values()), default=0)
        initial = [p for p in self._plain if self.entries[p].ts == join_ts]
        groups: list[list] = []
        open_lo, open_n, is_open = None, 0, False
        for lo, hi in zip(lows, highs):
            if not is_open:
                open_lo, open_n, is_open = lo, 0, True
            i = 0 if lo is None else bisect.bisect_right(initial, lo)
            j = len(initial) if hi is None else bisect.bisect_right(initial, hi)
            open_n += j - i
            if open_n >= k:
                groups.append([open_lo, hi])
                is_open = False
        if is_open:
            if groups:
                groups[-1][1] = None
            else:
                groups.append([open_lo, None])
        out = [(g[0], g[1]) for g in groups]
        self._group_memo[k] = ((self.version, len(self._bounds)), out)
        return out

    def _elements(self, lo: int | None, hi: int | None) -> list[tuple[int, int]]:
        i = 0 if lo is None else bisect.bisect_right(self._plain, lo)
        j = len(self._plain) if hi is None else bisect.bisect_right(self._plain, hi)
        return [(self.entries[p].ts, p) for p in self._plain[i:j]]

    def _replay_for(self, lo, hi, k: int) -> SplitReplay:
        states = self._offline.get(k)
        if states is None:
            return replay(self._elements(lo, hi), lo, hi, k)
        with self._offline_lock:
            state = states.get((lo, hi))
            if state is None:
                state = IncrementalReplay(lo, hi, k)
                for ts, p in sorted(self._elements(lo, hi)):
                    state.add(ts, p)
                if state.pending_ts is not None and state.pending_ts < self.next_ts:
                    state.flush()
                states[(lo, hi)] = state
            return state.current()

    def enable_offline(self, k: int) -> None:
        """Maintain the candidate ranges for ``k`` incrementally on every insert."""
        with self._lock.write():
            self._offline.setdefault(k, {})

    @property
    def offline_ks(self) -> set[int]:
        return set(self._offline)

    def _hi_key(self, r: tuple) -> float:
        return math.inf if r[1] is None else self._enc(r[1])

    def _to_candidate(self, r: tuple) -> CandidateRange:
        lo, hi, count = r
        return CandidateRange(IdRange(self._enc(lo), self._enc(hi), False, hi is not None), count)

    def candidate_ranges(self, cover: IdRange, k: int) -> list[CandidateRange]:
        """k-respecting candidate ranges intersecting ``cover``.

        Partially covered ranges at either end are merged into their inward
        neighbour.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        with self._lock.read():
            i, j = self._span(cover)
            if i == j:
                raise EmptyRangeError(f"no identifiers in {cover}")
            groups = self.bucket_groups(k)
            if self._offline.get(k) is not None:
                live = set(groups)
                with self._offline_lock:
                    for key in [g for g in self._offline[k] if g not in live]:
                        del self._offline[k][key]
            hits: list[CandidateRange] = []
            for lo, hi in groups:
                group_range = IdRange(self._enc(lo), self._enc(hi), False, hi is not None)
                if not group_range.overlaps(cover):
                    continue
                ranges = self._replay_for(lo, hi, k).ranges()
                start = 0
                if cover.first is not None:
                    start = bisect.bisect_left(ranges, cover.first, key=self._hi_key)
                for r in ranges[start:]:
                    cand = self._to_candidate(r)
                    if not cand.range.overlaps(cover):
                        break
                    hits.append(cand)
        return merge_edges(hits, cover)

    # -- copies and persistence -----------------------------------------

    def snapshot(self) -> TimestampedStore:
        """Independent copy of the current state (offline structures excluded)."""
        with self._lock.read():
            other = TimestampedStore(self.key)
            other.entries = dict(self.entries)
            other.next_ts = self.next_ts
            other.version = self.version
            other.log = list(self.log)
            other._plain = list(self._plain)
            other._cipher = list(self._cipher)
            other._bounds = list(self._bounds)
            other.policy = self.policy
            return other

    def rekey(self, key: OpesKey) -> TimestampedStore:
        """Copy of this store with every ciphertext recomputed under ``key``."""
        other = self.snapshot()
        other.key = key
        other._scheme = opes.scheme_for(key)
        other._cipher = other._scheme.encrypt_many(other._plain)
        other.entries = {
            p: replace(e, id=other._scheme.encrypt(p)) for p, e in other.entries.items()
        }
        return other

    def dump_event_log(self, path: str | Path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.log), encoding="utf-8")


def _format_attrs(attrs: Attrs) -> str:
    for k, v in attrs.items():
        if any(c in str(k) + str(v) for c in ";=\n") or " " in str(k):
            raise ValueError(f"attribute {k}={v!r} cannot be written to an event log")
    return ";".join(f"{k}={v}" for k, v in attrs.items())


def _parse_attrs(text: str) -> dict[str, str]:
    attrs = {}
    for part in text.split(";"):
        if part:
            name, _, value = part.partition("=")
            attrs[name] = value
    return attrs


def replay_events(
    lines: Iterable[str], key: OpesKey, policy: BucketPolicy | None = None
) -> TimestampedStore:
    """Rebuild a store from event-log lines.

    With a ``policy``, buckets are partitioned once the first timestamp batch
    (the join-time dataset) has been loaded.
    """
    store = TimestampedStore(key)
    partitioned = policy is None
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split(" ", 3)
        op = parts[0]
        try:
            pid, ts = int(parts[1]), int(parts[2])
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: malformed event {line!r}") from exc
        if not partitioned and ts > store.next_ts:
            store.partition_buckets(policy)
            partitioned = True
        store._set_clock(ts)
        if op == "INS":
            store.insert(pid, _parse_attrs(parts[3] if len(parts) > 3 else ""))
        elif op == "DEL":
            store.delete(pid)
        else:
            raise ValueError(f"line {lineno}: unknown event {op!r}")
    if not partitioned:
        store.partition_buckets(policy)
    return store


def load_event_log(
    path: str | Path, key: OpesKey, policy: BucketPolicy | None = None
) -> TimestampedStore:
    with open(path, encoding="utf-8") as fh:
        return replay_events(fh, key, policy)


def merge_edges(hits: list[CandidateRange], cover: IdRange) -> list[CandidateRange]:
    out = list(hits)
    if len(out) >= 2 and not out[0].range.issubset(cover):
        a, b = out[0], out[1]
        out[0:2] = [CandidateRange(a.range.hull(b.range), a.count + b.count)]
    if len(out) >= 2 and not out[-1].range.issubset(cover):
        a, b = out[-2], out[-1]
        out[-2:] = [CandidateRange(a.range.hull(b.range), a.count + b.count)]
    return out

