from __future__ import annotations

import random
import string
import warnings
from dataclasses import dataclass

import pytest

from kprotect.opes import keygen
from kprotect.plan import CompositionPlan, PlanNode
from kprotect.service import ConsentTable, DataService, ServiceConfig
from kprotect.store import BucketPolicy, TimestampedStore

F13 = [3, 8, 15, 20, 100, 150, 199, 250, 300, 400, 512, 700, 900]
LETTERS = {ch: i + 1 for i, ch in enumerate(string.ascii_lowercase)}
LETTER_BATCHES = ["blqy", "de", "cghsu", "amntw", "op"]


@pytest.fixture(autouse=True)
def _quiet_alpha_one():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="alpha = 1", category=RuntimeWarning)
        yield


def f13_store(seed: int = 0) -> TimestampedStore:
    store = TimestampedStore(keygen(seed, 1024))
    for p in F13:
        store.insert(p, {"ssn": str(p), "dob": f"19{p % 100:02d}-01-01"})
    store.partition_buckets(BucketPolicy.whole())
    return store


def lettered_store(seed: int = 5) -> TimestampedStore:
    store = TimestampedStore(keygen(seed, 64))
    for batch in LETTER_BATCHES:
        for ch in batch:
            store.insert(LETTERS[ch])
        store.advance_clock()
    store.partition_buckets(BucketPolicy.whole())
    return store


@pytest.fixture
def f13():
    return f13_store()


@pytest.fixture
def lettered():
    return lettered_store()


SHAPES = {
    "chain2": [("S0", "S1")],
    "chain3": [("S0", "S1"), ("S1", "S2")],
    "fork": [("S0", "S1"), ("S0", "S2")],
    "diamond": [("S0", "S1"), ("S0", "S2"), ("S1", "S3"), ("S2", "S3")],
    "running": [("S0", "S1"), ("S1", "S2"), ("S1", "S3"), ("S3", "S4")],
}


@dataclass
class Federation:
    plan: CompositionPlan
    stores: dict[str, TimestampedStore]
    consent: set[int]
    alpha: int

    def services(self, offline: bool = False) -> dict[str, DataService]:
        out = {}
        for node in self.plan.nodes.values():
            config = ServiceConfig(node.service, k=node.k, offline=offline)
            out[node.service] = DataService(config, self.stores[node.service], consent=ConsentTable(set(self.consent)))
        return out


def random_federation(
    seed: int,
    *,
    min_size: int = 100,
    max_size: int = 1000,
    groups: int = 8,
    shape: str | None = None,
) -> Federation:
    """Overlapping services with tombstones and late insertions, on a random plan shape."""
    r = random.Random(seed)
    shape = shape or r.choice(sorted(SHAPES))
    edges = SHAPES[shape]
    names = sorted({n for e in edges for n in e})
    ks = {n: r.choice([2, 3, 5]) for n in names}
    alpha = r.choice([1, 5, 10])
    floor = max(min_size, 2 * alpha * max(ks.values()) + 10)
    size = r.randint(floor, max(floor, max_size))
    key = keygen(r.randrange(2**32), 2**16)
    universe = r.sample(range(2**16), int(size * 1.3))
    stores = {}
    for name in names:
        members = [p for p in universe if r.random() < 0.85][:size]
        store = TimestampedStore(key)
        initial = int(len(members) * 0.8)
        for p in members[:initial]:
            store.insert(p, _attrs(name, p, r, groups))
        store.partition_buckets(BucketPolicy.fixed_count(r.choice([20, 60, 200])))
        for j, p in enumerate(members[initial:]):
            if j % 25 == 0:
                store.advance_clock()
            store.insert(p, _attrs(name, p, r, groups))
        for p in r.sample(members, len(members) // 40):
            store.delete(p)
        stores[name] = store
    nodes = {}
    for name in names:
        root = all(b != name for _, b in edges)
        nodes[name] = PlanNode(name, name, ks[name], const={"grp": "g0"} if root else None)
    plan = CompositionPlan(nodes, list(edges), {"alpha": str(alpha)})
    consent = {p for p in universe if r.random() < 0.19}
    return Federation(plan, stores, consent, alpha)


def _attrs(name: str, p: int, r: random.Random, groups: int) -> dict[str, str]:
    return {"ssn": str(p), "grp": f"g{r.randrange(groups)}", "v": f"{name}-{p % 97}"}


def reference_rows(plan: CompositionPlan, stores: dict[str, TimestampedStore]) -> set[frozenset]:
    """Plaintext executor: the same composition computed directly over the stores."""
    out: dict[str, dict[int, dict]] = {}
    for n in plan.order:
        node = plan.nodes[n]
        live = {p: dict(e.attrs) for p, e in stores[node.service].entries.items() if not e.tombstone}
        parents = plan.parents(n)
        if not parents:
            out[n] = {p: a for p, a in live.items() if all(a.get(c) == v for c, v in node.const.items())}
        else:
            ids = set.intersection(*(set(out[q]) for q in parents))
            out[n] = {p: live[p] for p in ids if p in live}
    leaves = plan.leaves
    ids = set.intersection(*(set(out[leaf]) for leaf in leaves))
    idents = {node.identifier_attr for node in plan.nodes.values()}
    names: dict[tuple[str, str], str] = {}
    taken: list[str] = []
    for leaf in leaves:
        seen: list[str] = []
        for attrs in out[leaf].values():
            seen.extend(a for a in attrs if a not in seen)
        for a in seen:
            if a in idents:
                continue
            names[(leaf, a)] = a if a not in taken else f"{leaf}.{a}"
            taken.append(names[(leaf, a)])
    rows = set()
    for p in ids:
        row = {}
        for leaf in leaves:
            for a, v in out[leaf][p].items():
                if (leaf, a) in names:
                    row[names[(leaf, a)]] = v
        rows.add(frozenset(row.items()))
    return rows


def row_set(table) -> set[frozenset]:
    return {frozenset(row.items()) for row in table.rows}
