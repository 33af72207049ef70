"""Mediator side of the generalization protocols and plan execution.

The mediator only ever handles ciphertexts. For each identifier ``x`` it
must send to a child service it computes a range holding at least ``k`` of
that service's identifiers, invokes the service with the range, and drops
the false positives itself.
"""

from __future__ import annotations

import bisect
import csv
import itertools
import threading
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from . import wire
from .errors import (
    InsufficientDataError,
    KProtectError,
    PlanError,
    ProtocolViolationError,
    error_for_code,
)
from .plan import CompositionPlan, effective_k
from .ranges import CandidateRange, IdRange
from .service import DataService
from .transcript import InvocationTranscript, TranscriptEvent
from .transport import InProcessTransport, Transport
from .wire import ProtocolMessage

PROTOCOLS = ("hybrid", "dataset", "domain", "none")
MAX_REFINEMENTS = 4


class GenCache:
    """Selectivities and candidate ranges already obtained in one execution."""

    def __init__(self):
        self.selectivities: dict[tuple, tuple[int, int | None]] = {}
        self.candidate_sets: dict[tuple, tuple[CandidateRange, ...]] = {}
        self._index: dict[tuple[str, int], tuple[list, list[CandidateRange]]] = {}
        self._lock = threading.Lock()

    def get_selectivity(self, service: str, rng: IdRange, mode: str | None = None):
        return self.selectivities.get((service, rng, mode))

    def put_selectivity(self, service: str, rng: IdRange, count: int, mid: int | None, mode: str | None = None):
        with self._lock:
            self.selectivities[(service, rng, mode)] = (count, mid)

    def get_candidates(self, service: str, cover: IdRange, k: int):
        return self.candidate_sets.get((service, cover, k))

    def put_candidates(self, service: str, cover: IdRange, k: int, ranges) -> None:
        with self._lock:
            self.candidate_sets[(service, cover, k)] = tuple(ranges)
            keys, items = self._index.setdefault((service, k), ([], []))
            for cand in ranges:
                # only split ranges are reusable; merged ones depend on the cover
                if not k <= cand.count < 2 * k:
                    continue
                key = _first_key(cand.range)
                pos = bisect.bisect_right(keys, key)
                if any(items[i].range == cand.range for i in range(max(0, pos - 4), pos)):
                    continue
                keys.insert(pos, key)
                items.insert(pos, cand)

    def find(self, service: str, x: int, k: int) -> CandidateRange | None:
        """A cached range for ``service`` and ``k`` containing ``x``.

        Cached ranges are unions of at most three consecutive base ranges of
        one deterministic partition, so only the closest few starts can hold x.
        """
        entry = self._index.get((service, k))
        if entry is None:
            return None
        keys, items = entry
        pos = bisect.bisect_right(keys, x)
        seen_starts = 0
        last_key = object()
        for i in range(pos - 1, -1, -1):
            if keys[i] != last_key:
                seen_starts += 1
                last_key = keys[i]
                if seen_starts > 4:
                    break
            if x in items[i].range:
                return items[i]
        return None


def _first_key(rng: IdRange) -> int:
    return -1 if rng.first is None else rng.first


@dataclass
class Generalization:
    range: IdRange
    count: int | None
    rounds: int
    episode: int
    reused: bool = False
    events: list[TranscriptEvent] = field(default_factory=list)


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[dict[str, str]]

    def as_set(self) -> set[tuple]:
        return {tuple(row.get(c) for c in self.columns) for row in self.rows}

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.columns)
            writer.writeheader()
            writer.writerows(self.rows)


class Mediator:
    def __init__(
        self,
        transport: Transport,
        transcript: InvocationTranscript | None = None,
        refine: bool = True,
    ):
        self.transport = transport
        self.refine = refine
        self.transcript = transcript if transcript is not None else InvocationTranscript()
        self.stats: Counter = Counter()
        self._rid = itertools.count(1)
        self._episodes = itertools.count(1)
        self._lock = threading.Lock()

    @classmethod
    def for_services(cls, services: Mapping[str, DataService] | DataService, **kwargs) -> Mediator:
        if isinstance(services, DataService):
            services = {services.name: services}
        return cls(InProcessTransport(services), **kwargs)

    def new_episode(self) -> int:
        with self._lock:
            return next(self._episodes)

    def call(
        self,
        service: str,
        kind: str,
        *,
        edge: tuple[str, str],
        episode: int | None = None,
        target: int | None = None,
        precise: bool = False,
        **fields,
    ) -> ProtocolMessage:
        with self._lock:
            rid = next(self._rid)
        msg = ProtocolMessage(kind, rid, **fields)
        note = dict(edge=edge, service=service, episode=episode, target=target)
        self.transcript.append(direction="out", message=msg, precise=precise, **note)
        resp = self.transport.request(service, msg)
        self.transcript.append(direction="in", message=resp, **note)
        if resp.request_id != rid and resp.kind != wire.ERROR:
            raise ProtocolViolationError(f"{service} answered request {rid} with id {resp.request_id}")
        if resp.kind == wire.ERROR:
            raise error_for_code(resp.code or "error", resp.detail or "")
        return resp

    # -- selectivity probing ---------------------------------------------

    def probe(
        self,
        service: str,
        rng: IdRange,
        *,
        edge: tuple[str, str],
        episode: int,
        target: int,
        cache: GenCache | None = None,
        mode: str | None = None,
    ) -> tuple[int, int | None, bool]:
        """``(count, mid, sent)``; ``sent`` is False when served from the cache."""
        if cache is not None:
            hit = cache.get_selectivity(service, rng, mode)
            if hit is not None:
                self.stats["cached_selectivities"] += 1
                return hit[0], hit[1], False
        resp = self.call(
            service, wire.SELECTIVITY_REQ, range=rng, mode=mode, edge=edge, episode=episode, target=target
        )
        self.stats["selectivity_queries"] += 1
        if resp.count is None:
            raise ProtocolViolationError(f"{service} sent SELECTIVITY_RESP without count")
        if cache is not None:
            cache.put_selectivity(service, rng, resp.count, resp.mid, mode)
        return resp.count, resp.mid, True

    def domain_generalize(
        self,
        service: str,
        x: int,
        k: int,
        *,
        edge: tuple[str, str] | None = None,
        episode: int | None = None,
    ) -> Generalization:
        """Baseline: halve the identifier domain around ``x`` while the half keeps >= k.

        Kept for comparisons only; it probes halves that may hold fewer than k
        identifiers and reveals ciphertexts of fixed domain points.
        """
        edge = edge or ("user", service)
        episode = episode or self.new_episode()
        start = len(self.transcript)
        note = dict(edge=edge, episode=episode, target=x, mode="domain")
        rng = IdRange.full()
        count, mid, _ = self.probe(service, rng, **note)
        rounds = 1
        if count < k:
            raise InsufficientDataError(f"{service} holds {count} identifiers, fewer than k={k}")
        while count > k and mid is not None:
            half = rng.intersection(IdRange.at_most(mid) if x <= mid else IdRange.above(mid))
            if half is None or half == rng:
                break
            sub_count, sub_mid, _ = self.probe(service, half, **note)
            rounds += 1
            if sub_count < k:
                break
            rng, count, mid = half, sub_count, sub_mid
        return Generalization(rng, count, rounds, episode, events=self.transcript.events[start:])

    def dataset_generalize(
        self,
        service: str,
        x: int,
        threshold: int,
        *,
        edge: tuple[str, str] | None = None,
        episode: int | None = None,
        cache: GenCache | None = None,
    ) -> Generalization:
        """Halve the service's ordered identifiers around ``x`` while the count exceeds ``2 * threshold``."""
        edge = edge or ("user", service)
        episode = episode or self.new_episode()
        start = len(self.transcript)
        note = dict(edge=edge, episode=episode, target=x, cache=cache)
        rng = IdRange.full()
        count, mid, sent = self.probe(service, rng, **note)
        rounds = int(sent)
        if count < threshold:
            raise InsufficientDataError(f"{service} holds {count} identifiers, fewer than {threshold}")
        while count > 2 * threshold:
            if mid is None:
                raise ProtocolViolationError(f"{service} omitted mid for a non-empty range")
            half = IdRange.at_most(mid) if x <= mid else IdRange.above(mid)
            nxt = rng.intersection(half)
            if nxt is None:
                raise ProtocolViolationError(f"{service} returned a mid outside {rng}")
            rng = nxt
            count, mid, sent = self.probe(service, rng, **note)
            rounds += int(sent)
        return Generalization(rng, count, rounds, episode, events=self.transcript.events[start:])

    def hybrid_generalize(
        self,
        service: str,
        x: int,
        k: int,
        alpha: int,
        *,
        edge: tuple[str, str] | None = None,
        episode: int | None = None,
        cache: GenCache | None = None,
    ) -> Generalization:
        """Narrow to a range of at least ``alpha * k`` identifiers, then pick x's candidate range."""
        if alpha < 1:
            raise ValueError("alpha must be >= 1")
        if alpha == 1:
            warnings.warn("alpha = 1 gives no replay resistance", RuntimeWarning, stacklevel=2)
        edge = edge or ("user", service)
        episode = episode or self.new_episode()
        start = len(self.transcript)
        outer = self.dataset_generalize(service, x, alpha * k, edge=edge, episode=episode, cache=cache)
        cover = outer.range
        for _ in range(MAX_REFINEMENTS + 1):
            cands = cache.get_candidates(service, cover, k) if cache is not None else None
            if cands is None:
                resp = self.call(
                    service, wire.CANDIDATES_REQ, range=cover, k=k, edge=edge, episode=episode, target=x
                )
                self.stats["candidate_requests"] += 1
                cands = resp.ranges or ()
                if cache is not None:
                    cache.put_candidates(service, cover, k, cands)
            chosen = [c for c in cands if x in c.range]
            if len(chosen) != 1:
                raise ProtocolViolationError(
                    f"{service} returned {len(chosen)} candidate ranges containing the input"
                )
            pick = chosen[0]
            # split ranges hold fewer than 2k ids; more means an edge merge
            if not self.refine or pick.count < 2 * k:
                break
            wider = cover.hull(pick.range)
            if wider == cover:
                break
            cover = wider
            self.stats["candidate_refinements"] += 1
        if pick.count < k:
            raise ProtocolViolationError(f"{service} returned a candidate range of {pick.count} < k={k}")
        return Generalization(pick.range, pick.count, outer.rounds, episode, events=self.transcript.events[start:])

    # -- invocation ---------------------------------------------------------

    def invoke_range(
        self,
        service: str,
        rng: IdRange,
        *,
        edge: tuple[str, str],
        episode: int | None = None,
        target: int | None = None,
        precise: bool = False,
    ) -> list[tuple[int, dict]]:
        resp = self.call(
            service, wire.INVOKE_REQ, range=rng, edge=edge, episode=episode, target=target, precise=precise
        )
        self.stats["invocations"] += 1
        return list(resp.tuples or ())

    def invoke_protected(
        self,
        service: str,
        x: int,
        k: int,
        alpha: int,
        cache: GenCache | None = None,
        *,
        edge: tuple[str, str] | None = None,
        protocol: str = "hybrid",
    ) -> tuple[list[tuple[int, dict]], list[tuple[int, dict]], IdRange]:
        """Invoke ``service`` for ``x`` through a k-protecting range.

        Returns ``(matches, everything_returned, range_used)``; ``matches``
        keeps only tuples whose identifier equals ``x``.
        """
        edge = edge or ("user", service)
        episode = self.new_episode()
        hit = cache.find(service, x, k) if cache is not None and protocol == "hybrid" else None
        if hit is not None:
            self.stats["reused_ranges"] += 1
            rng = hit.range
        elif protocol == "hybrid":
            rng = self.hybrid_generalize(service, x, k, alpha, edge=edge, episode=episode, cache=cache).range
        elif protocol == "dataset":
            rng = self.dataset_generalize(service, x, k, edge=edge, episode=episode, cache=cache).range
        elif protocol == "domain":
            rng = self.domain_generalize(service, x, k, edge=edge, episode=episode).range
        else:
            raise ValueError(f"unknown protocol {protocol!r}")
        returned = self.invoke_range(service, rng, edge=edge, episode=episode, target=x)
        return [t for t in returned if t[0] == x], returned, rng

    def consent_lookup(self, service: str, x: int, *, edge: tuple[str, str]) -> bool:
        resp = self.call(service, wire.CONSENT_REQ, subject=x, edge=edge, target=x)
        self.stats["consent_lookups"] += 1
        return bool(resp.consented)


def alpha_for(p: float, k: int) -> int:
    """Smallest alpha >= 1 whose replay-breach probability 1/(alpha*k)^2 is at most ``p``."""
    if not 0 < p <= 1:
        raise ValueError(f"p must be in (0, 1], got {p}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    # integer search avoids float noise in sqrt(1/p)/k landing just above an integer
    alpha = 1
    while (alpha * k) ** 2 * p < 1 - 1e-12:
        alpha += 1
    return alpha


# -- plan execution -------------------------------------------------------------


def execute_plan(
    plan: CompositionPlan,
    services: Mapping[str, DataService] | Transport,
    user_inputs: Mapping[str, Mapping[str, str]] | None = None,
    alpha: int | None = None,
    consent_enabled: bool | None = None,
    *,
    cache: bool = True,
    protocol: str = "hybrid",
    parallel: bool = False,
    execution_id: str = "exec-0",
) -> tuple[ResultTable, InvocationTranscript]:
    """Run ``plan`` and return the identifier-free result table and the transcript.

    ``protocol="none"`` invokes children with exact identifiers (no
    protection), for baseline measurements. Execution statistics are left on
    ``transcript.stats``.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    if alpha is None:
        alpha = int(plan.params.get("alpha", 1))
    if consent_enabled is None:
        consent_enabled = plan.params.get("consent", "off") == "on"
    if isinstance(services, Transport):
        transport = services
        versions: dict[str, int] = {}
    else:
        transport = InProcessTransport(services)
        versions = {name: svc.store.version for name, svc in services.items()}
    transcript = InvocationTranscript(
        execution_id=execution_id,
        plan_fingerprint=plan.fingerprint(),
        alpha=alpha,
        protocol=protocol,
        store_versions=versions,
    )
    mediator = Mediator(transport, transcript)
    gen_cache = GenCache() if cache else None
    outputs: dict[str, dict[int, dict]] = {}

    def run_node(node_id: str) -> dict[int, dict]:
        node = plan.nodes[node_id]
        if not plan.parents(node_id):
            const = dict(node.const or {})
            const.update((user_inputs or {}).get(node_id, {}))
            if not const:
                raise PlanError(f"root node {node_id} has no input binding")
            resp = mediator.call(node.service, wire.INVOKE_REQ, where=const, edge=("user", node_id))
            mediator.stats["root_invocations"] += 1
            return {i: a for i, a in sorted(resp.tuples or ())}
        return _run_child(plan, node_id, outputs, mediator, alpha, consent_enabled, gen_cache, protocol)

    for layer in plan.layers():
        if parallel and len(layer) > 1:
            with ThreadPoolExecutor(max_workers=len(layer)) as pool:
                results = list(pool.map(_guard(run_node, plan), layer))
        else:
            results = [_guard(run_node, plan)(n) for n in layer]
        outputs.update(zip(layer, results))

    table = _join_leaves(plan, outputs)
    transcript.stats = dict(mediator.stats)
    return table, transcript


def _guard(fn, plan: CompositionPlan):
    def wrapped(node_id: str):
        try:
            return fn(node_id)
        except KProtectError as exc:
            exc.args = (f"edge {plan.edge_label(node_id)}->{node_id}: {exc}",)
            raise

    return wrapped


def _run_child(
    plan: CompositionPlan,
    node_id: str,
    outputs: dict[str, dict[int, dict]],
    mediator: Mediator,
    alpha: int,
    consent_enabled: bool,
    cache: GenCache | None,
    protocol: str,
) -> dict[int, dict]:
    node = plan.nodes[node_id]
    parents = plan.parents(node_id)
    edge = (plan.edge_label(node_id), node_id)
    inputs = set(outputs[parents[0]])
    for p in parents[1:]:
        inputs &= set(outputs[p])
    ordered = sorted(inputs)
    result: dict[int, dict] = {}
    if protocol == "none":
        for x in ordered:
            for i, attrs in mediator.invoke_range(node.service, IdRange.point(x), edge=edge, target=x, precise=True):
                if i == x:
                    result[i] = attrs
        return result

    k = effective_k(plan, node_id)
    consenting: list[int] = []
    protected = ordered
    if consent_enabled:
        source = plan.nodes[parents[0]].service
        flags = {x: mediator.consent_lookup(source, x, edge=edge) for x in ordered}
        protected = [x for x in ordered if not flags[x]]
        consenting = [x for x in ordered if flags[x]]

    retrieved: dict[int, dict] = {}
    covered: list[IdRange] = []
    for x in protected:
        matches, returned, rng = mediator.invoke_protected(
            node.service, x, k, alpha, cache, edge=edge, protocol=protocol
        )
        retrieved.update(returned)
        covered.append(rng)
        for i, attrs in matches:
            result[i] = attrs
    for x in consenting:
        if any(x in r for r in covered):
            mediator.stats["consent_reused"] += 1
            if x in retrieved:
                result[x] = retrieved[x]
            continue
        for i, attrs in mediator.invoke_range(node.service, IdRange.point(x), edge=edge, target=x, precise=True):
            if i == x:
                result[i] = attrs
        mediator.stats["precise_invocations"] += 1
    return dict(sorted(result.items()))


def _join_leaves(plan: CompositionPlan, outputs: dict[str, dict[int, dict]]) -> ResultTable:
    identifier_attrs = {n.identifier_attr for n in plan.nodes.values()}
    leaves = plan.leaves
    ids = set(outputs[leaves[0]])
    for leaf in leaves[1:]:
        ids &= set(outputs[leaf])
    columns: list[str] = []
    rename: dict[tuple[str, str], str] = {}
    for leaf in leaves:
        names: list[str] = []
        for attrs in outputs[leaf].values():
            for a in attrs:
                if a not in names:
                    names.append(a)
        for a in names:
            if a in identifier_attrs:
                continue
            col = a if a not in columns else f"{leaf}.{a}"
            rename[(leaf, a)] = col
            columns.append(col)
    rows = []
    for x in sorted(ids):
        row: dict[str, str] = {}
        for leaf in leaves:
            for a, v in outputs[leaf][x].items():
                if (leaf, a) in rename:
                    row[rename[(leaf, a)]] = v
        rows.append(row)
    return ResultTable(columns, rows)
