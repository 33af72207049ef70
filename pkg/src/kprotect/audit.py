"""Offline verification of executions against store snapshots.

Every check recounts identifiers by scanning the snapshot's entries
directly; nothing here goes through the store's own range machinery, and
nothing here mutates a transcript or a store.
"""

from __future__ import annotations

import math
import random
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import wire
from .errors import StaleSnapshotError
from .mediator import Mediator
from .plan import CompositionPlan, effective_k
from .ranges import IdRange
from .service import DataService, ServiceConfig
from .store import TimestampedStore
from .transcript import InvocationTranscript

# protocols whose probes are expected to respect the round bound
BOUNDED_PROTOCOLS = ("hybrid", "dataset")


@dataclass(frozen=True)
class Violation:
    edge: str
    range: IdRange
    recounted: int
    required: int
    kind: str = "invoke"  # "invoke" or "probe"
    seq: int = -1

    def __str__(self) -> str:
        what = "invocation" if self.kind == "invoke" else "selectivity probe"
        return f"{self.edge}: {what} on {self.range} holds {self.recounted} < k={self.required}"


@dataclass
class AuditReport:
    violations: list[Violation] = field(default_factory=list)
    probe_violations: list[Violation] = field(default_factory=list)
    round_violations: list[tuple[str, int, int, int]] = field(default_factory=list)
    rounds_per_edge: dict[str, dict[str, float]] = field(default_factory=dict)
    breach_probabilities: dict[str, float] = field(default_factory=dict)
    consented_precise: int = 0

    @property
    def passed(self) -> bool:
        return not (self.violations or self.probe_violations or self.round_violations)

    def to_text(self) -> str:
        lines = [f"pass: {'yes' if self.passed else 'no'}"]
        lines.append(f"violations: {len(self.violations)}")
        lines.extend(f"  {v}" for v in self.violations)
        lines.append(f"sub_k_probes: {len(self.probe_violations)}")
        lines.extend(f"  {v}" for v in self.probe_violations)
        lines.append(f"round_bound_violations: {len(self.round_violations)}")
        for edge, episode, rounds, bound in self.round_violations:
            lines.append(f"  {edge}: episode {episode} used {rounds} rounds > bound {bound}")
        lines.append(f"consented_precise_invocations: {self.consented_precise}")
        for edge, stats in sorted(self.rounds_per_edge.items()):
            body = " ".join(f"{k}={v:g}" for k, v in stats.items())
            lines.append(f"rounds {edge}: {body}")
        for edge, p in sorted(self.breach_probabilities.items()):
            lines.append(f"breach_probability {edge}: {p:.6g}")
        return "\n".join(lines) + "\n"


def breach_probability(alpha: int, k: int) -> float:
    """Chance that two replays of a query intersect in exactly the target: 1/(alpha*k)^2."""
    if alpha < 1 or k < 1:
        raise ValueError("alpha and k must be >= 1")
    return 1.0 / (alpha * k) ** 2


def round_bound(m: int, alpha: int, k: int) -> int:
    """Most selectivity rounds one generalization may take on a store of ``m`` identifiers."""
    ratio = m / (alpha * k)
    return max(0, math.ceil(math.log2(ratio))) + 2 if ratio > 1 else 2


def recount(store: TimestampedStore, rng: IdRange) -> int:
    """Identifiers (tombstones included) in ``rng``, by scanning every entry."""
    return sum(1 for e in store.entries.values() if e.id in rng)


def _split(services) -> tuple[dict[str, TimestampedStore], dict[str, set[int]]]:
    stores, consent = {}, {}
    for name, obj in services.items():
        if isinstance(obj, DataService):
            stores[name] = obj.store
            consent[name] = set(obj.consent.consented)
        else:
            stores[name] = obj
    return stores, consent


def _check_versions(transcript: InvocationTranscript, stores: Mapping[str, TimestampedStore]) -> None:
    for name, version in transcript.store_versions.items():
        store = stores.get(name)
        if store is not None and store.version != version:
            raise StaleSnapshotError(
                f"store {name} is at version {store.version}, transcript was taken at {version}"
            )


def verify_k_protection(
    transcript: InvocationTranscript,
    services: Mapping[str, DataService | TimestampedStore],
    plan: CompositionPlan,
    consent: Mapping[str, Iterable[int]] | None = None,
) -> AuditReport:
    """Recount every range a child service saw and compare with its effective k.

    Exact-identifier invocations pass only when the subject consented at the
    service that produced the identifier. Selectivity probes are held to the
    same threshold: a probe below k already tells the service where the
    mediator is looking.
    """
    stores, tables = _split(services)
    for name, ids in (consent or {}).items():
        tables[name] = set(ids)
    _check_versions(transcript, stores)
    report = AuditReport()
    episodes: dict[tuple[str, int], int] = defaultdict(int)
    sizes: dict[str, int] = {}
    for event in transcript.requests():
        node_id = event.edge[1]
        if node_id not in plan.nodes or not plan.parents(node_id):
            continue
        msg = event.message
        if msg.kind not in (wire.INVOKE_REQ, wire.SELECTIVITY_REQ) or msg.range is None:
            continue
        if event.service != plan.nodes[node_id].service:
            continue
        store = stores[event.service]
        required = effective_k(plan, node_id)
        label = f"{event.edge[0]}->{node_id}"
        report.breach_probabilities[label] = breach_probability(transcript.alpha, required)
        count = recount(store, msg.range)
        if msg.kind == wire.SELECTIVITY_REQ:
            episodes[(label, event.episode or 0)] += 1
            sizes.setdefault(label, len(store.entries))
            if count < required:
                report.probe_violations.append(Violation(label, msg.range, count, required, "probe", event.seq))
            continue
        if count >= required:
            continue
        if event.precise and _consented(event.target, plan, node_id, stores, tables):
            report.consented_precise += 1
            continue
        report.violations.append(Violation(label, msg.range, count, required, "invoke", event.seq))

    per_edge: dict[str, list[int]] = defaultdict(list)
    for (label, episode), rounds in sorted(episodes.items()):
        per_edge[label].append(rounds)
        node_id = label.split("->", 1)[1]
        bound = round_bound(sizes[label], transcript.alpha, effective_k(plan, node_id))
        if transcript.protocol in BOUNDED_PROTOCOLS and rounds > bound:
            report.round_violations.append((label, episode, rounds, bound))
    for label, counts in per_edge.items():
        node_id = label.split("->", 1)[1]
        report.rounds_per_edge[label] = {
            "episodes": len(counts),
            "mean": statistics.fmean(counts),
            "max": max(counts),
            "bound": round_bound(sizes[label], transcript.alpha, effective_k(plan, node_id)),
        }
    return report


def _consented(target, plan, node_id, stores, tables) -> bool:
    if target is None:
        return False
    source = plan.nodes[plan.parents(node_id)[0]].service
    table = tables.get(source)
    if not table:
        return False
    store = stores.get(source) or stores[plan.nodes[node_id].service]
    for entry in store.entries.values():
        if entry.id == target:
            return entry.plain_id in table
    return False


def check_round_bound(
    transcript: InvocationTranscript,
    services: Mapping[str, DataService | TimestampedStore],
    alpha: int,
    plan: CompositionPlan,
) -> bool:
    """True when every generalization episode stayed within ceil(log2(m/(alpha*k))) + 2 rounds."""
    stores, _ = _split(services)
    counts: dict[tuple[str, int], int] = defaultdict(int)
    for event in transcript.requests(wire.SELECTIVITY_REQ):
        counts[(event.edge[1], event.episode or 0)] += 1
    for (node_id, _), rounds in counts.items():
        service = plan.nodes[node_id].service
        k = effective_k(plan, node_id)
        if rounds > round_bound(len(stores[service].entries), alpha, k):
            return False
    return True


def selected_range(transcript: InvocationTranscript, target: int, service: str | None = None) -> IdRange | None:
    """Range of the last non-precise invocation made for ``target``."""
    found = None
    for event in transcript.requests(wire.INVOKE_REQ):
        if event.target == target and not event.precise and event.message.range is not None:
            if service is None or event.service == service:
                found = event.message.range
    return found


def verify_nesting(
    executions: Sequence[tuple[InvocationTranscript | IdRange, TimestampedStore]],
    x: int,
    k: int,
    service: str | None = None,
) -> bool | None:
    """Check that x's range only shrinks as the store grows.

    ``executions`` pairs each transcript (or directly the selected range) with
    the store snapshot it ran against, oldest first. For every consecutive
    pair the later range must be inside the earlier one, and the overlap must
    still hold ``k`` identifiers of the later store. Returns ``None`` when x
    was not generalized in one of the executions.
    """
    picked: list[tuple[IdRange, TimestampedStore]] = []
    for record, store in executions:
        if x not in store.entries:
            return None
        target = store.entries[x].id
        rng = record if isinstance(record, IdRange) else selected_range(record, target, service)
        if rng is None:
            return None
        picked.append((rng, store))
    for (before, _), (after, store) in zip(picked, picked[1:]):
        if not after.issubset(before):
            return False
        overlap = before.intersection(after)
        if overlap is None or recount(store, overlap) < k:
            return False
    return True


@dataclass
class ReplayResult:
    trials: int
    breaches: int
    partial_leaks: int
    formula: float
    versions: int

    @property
    def breach_rate(self) -> float:
        return self.breaches / self.trials if self.trials else 0.0

    @property
    def partial_rate(self) -> float:
        return self.partial_leaks / self.trials if self.trials else 0.0


def observed_ranges(store: TimestampedStore, x: int, k: int, alpha: int) -> list[IdRange]:
    """Ranges the service sees while the hybrid protocol generalizes ``x``."""
    svc = DataService(ServiceConfig("replay", k=k), store)
    mediator = Mediator.for_services(svc)
    target = store.encrypt(x)
    matches, _, rng = mediator.invoke_protected("replay", target, k, alpha)
    cover = [
        e.message.range
        for e in mediator.transcript.requests(wire.CANDIDATES_REQ)
        if e.message.range is not None
    ]
    return [*cover, rng]


def replay_experiment(
    store: TimestampedStore,
    x: int,
    k: int,
    alpha: int,
    schedule: Sequence[Sequence[int]],
    trials: int,
    *,
    replays: int = 2,
    seed: int = 0,
) -> ReplayResult:
    """Monte-Carlo estimate of replay breaches.

    Store versions are the base store followed by the cumulative insertion
    batches of ``schedule``. Each trial replays the query against
    ``replays`` randomly drawn versions and intersects every range the
    service observed. A breach is an intersection holding exactly ``x``;
    intersections of 2..k-1 identifiers are reported as partial leaks.
    """
    versions = [store.snapshot()]
    current = store.snapshot()
    for batch in schedule:
        current.advance_clock()
        for pid in batch:
            if pid not in current.entries:
                current.insert(pid, {})
        versions.append(current.snapshot())
    seen = [observed_ranges(v, x, k, alpha) for v in versions]
    rng = random.Random(seed)
    breaches = partial = 0
    for _ in range(trials):
        picks = [rng.randrange(len(versions)) for _ in range(replays)]
        inter: IdRange | None = IdRange.full()
        for i in picks:
            for r in seen[i]:
                inter = inter.intersection(r) if inter is not None else None
        if inter is None:
            continue
        latest = versions[max(picks)]
        n = recount(latest, inter)
        if n == 1 and latest.entries[x].id in inter:
            breaches += 1
        elif 2 <= n < k:
            partial += 1
    return ReplayResult(trials, breaches, partial, breach_probability(alpha, k), len(versions))
