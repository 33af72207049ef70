"""Synthetic data, plan runs and benchmark sweeps.

A dataset directory holds one event log per service (``DS1.log`` ...), the
shared OPES key (``key.txt``) and the consenting subjects (``consent.txt``).
Services and the mediator all run in this process; with ``transport=tcp``
every service gets its own listening thread.
"""

from __future__ import annotations

import csv
import time
from contextlib import ExitStack
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .audit import AuditReport, verify_k_protection
from .errors import PlanError
from .mediator import ResultTable, execute_plan
from .opes import OpesKey, keygen
from .plan import CompositionPlan, PlanNode, effective_k
from .service import ConsentTable, DataService, ServiceConfig
from .store import BucketPolicy, TimestampedStore, load_event_log
from .transcript import InvocationTranscript
from .transport import InProcessTransport, ServiceServer, TcpTransport, Transport

METRICS_HEADER = [
    "dataset_size",
    "alpha_k",
    "mode",
    "optimizations",
    "wall_time_ms",
    "selectivity_queries",
    "invocations",
    "reused_ranges",
    "result_rows",
]
OPTIMIZATIONS = ("cache", "consent", "offline")
SERVICES = ("DS1", "DS2", "DS3")
CONSENT_FRACTION = 0.19
DEFAULT_DOMAIN = 2**24
DISEASES = ("flu", "asthma", "diabetes", "migraine", "anemia", "eczema")


@dataclass
class ExperimentConfig:
    dataset_sizes: tuple[int, ...] = (5000, 10000, 20000, 40000)
    k: int = 5
    alphas: tuple[int, ...] = (5,)
    bucket_size: int = 1000
    optimizations: frozenset[str] = frozenset()
    repetitions: int = 10
    seed: int = 1
    transport: str = "inproc"
    cities: int = 10
    city: str = "city0"
    data_dir: str = "data"
    domain_size: int = DEFAULT_DOMAIN
    consent_fraction: float = CONSENT_FRACTION

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.k < 1 or any(a < 1 for a in self.alphas) or not self.alphas:
            raise ValueError("k and every alpha must be >= 1")
        unknown = set(self.optimizations) - set(OPTIMIZATIONS)
        if unknown:
            raise ValueError(f"unknown optimizations {sorted(unknown)}")
        if self.transport not in ("inproc", "tcp"):
            raise ValueError("transport must be inproc or tcp")
        for size in self.dataset_sizes:
            if size < 2 * max(self.alphas) * self.k:
                raise ValueError(f"dataset size {size} is below 2*alpha*k")

    @property
    def alpha(self) -> int:
        return self.alphas[0]

    @classmethod
    def parse(cls, text: str) -> ExperimentConfig:
        raw: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"config line {lineno}: expected key=value")
            raw[key.strip()] = value.strip()
        aliases = {"sizes": "dataset_sizes", "alpha": "alphas", "bucket": "bucket_size"}
        known = {f.name for f in fields(cls)}
        kwargs: dict = {}
        for key, value in raw.items():
            name = aliases.get(key, key)
            if name not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[name] = _convert(name, value)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        return cls.parse(Path(path).read_text(encoding="utf-8"))


def _ints(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.replace(" ", "").split(",") if v)


def _convert(name: str, value: str):
    if name in ("dataset_sizes", "alphas"):
        return _ints(value)
    if name == "optimizations":
        items = {v for v in value.replace(" ", "").split(",") if v and v != "none"}
        return frozenset(OPTIMIZATIONS if items == {"all"} else items)
    if name in ("k", "bucket_size", "repetitions", "seed", "cities", "domain_size"):
        return int(value)
    if name == "consent_fraction":
        return float(value)
    return value


# -- data generation ----------------------------------------------------------


def gen_data(
    seed: int,
    sizes: Iterable[int],
    city_count: int,
    out: str | Path,
    *,
    domain_size: int = DEFAULT_DOMAIN,
    consent_fraction: float = CONSENT_FRACTION,
    batches: int = 10,
) -> list[Path]:
    """Write ``DS1``/``DS2``/``DS3`` event logs for every size under ``out/n<size>``.

    DS1 holds ``(ssn, disease, city)`` for every subject, DS2 a random half
    treated for a second condition and DS3 demographics for everyone. 90% of
    each log is the join-time batch; the rest arrives in ``batches`` later
    timestamps.
    """
    if city_count < 1:
        raise ValueError("city_count must be >= 1")
    dirs = []
    for size in sizes:
        if size < 1:
            raise ValueError("sizes must be positive")
        rng = np.random.default_rng([seed, size])
        ids = rng.choice(domain_size, size=size, replace=False).astype(np.int64)
        ts = _timestamps(size, batches)
        city = rng.integers(0, city_count, size)
        disease = rng.integers(0, len(DISEASES), size)
        second = rng.random(size) < 0.5
        disease2 = rng.integers(0, len(DISEASES), size)
        year = rng.integers(1930, 2010, size)
        day = rng.integers(0, 365, size)
        sex = rng.integers(0, 2, size)
        consent = rng.random(size) < consent_fraction

        root = Path(out) / f"n{size}"
        root.mkdir(parents=True, exist_ok=True)
        logs = {name: [] for name in SERVICES}
        for i in range(size):
            pid = int(ids[i])
            logs["DS1"].append(f"INS {pid} {ts[i]} disease={DISEASES[disease[i]]};city=city{city[i]}")
            if second[i]:
                logs["DS2"].append(f"INS {pid} {ts[i]} disease={DISEASES[disease2[i]]}")
            dob = np.datetime64(f"{year[i]}-01-01") + np.timedelta64(int(day[i]), "D")
            logs["DS3"].append(f"INS {pid} {ts[i]} dob={dob};sex={'FM'[sex[i]]}")
        for name, lines in logs.items():
            (root / f"{name}.log").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        (root / "consent.txt").write_text(
            "".join(f"{int(p)}\n" for p in np.sort(ids[consent])), encoding="utf-8"
        )
        key_seed = int(rng.integers(0, 2**63))
        (root / "key.txt").write_text(f"seed={key_seed}\ndomain={domain_size}\n", encoding="utf-8")
        dirs.append(root)
    return dirs


def _timestamps(size: int, batches: int) -> list[int]:
    initial = size - size // 10
    out = [0] * initial
    rest = size - initial
    for j in range(rest):
        out.append(1 + (j * batches) // max(rest, 1))
    return out


def read_key(path: str | Path) -> OpesKey:
    values = dict(
        line.split("=", 1) for line in Path(path).read_text(encoding="utf-8").split() if "=" in line
    )
    return keygen(int(values["seed"]), int(values["domain"]))


@dataclass
class Dataset:
    root: Path
    key: OpesKey
    stores: dict[str, TimestampedStore]
    consent: set[int] = field(default_factory=set)


def load_dataset(root: str | Path, bucket_size: int = 1000) -> Dataset:
    root = Path(root)
    if not (root / "key.txt").exists():
        raise FileNotFoundError(f"{root} has no key.txt; run gen-data first")
    key = read_key(root / "key.txt")
    policy = BucketPolicy.fixed_count(bucket_size)
    stores = {p.stem: load_event_log(p, key, policy) for p in sorted(root.glob("*.log"))}
    consent: set[int] = set()
    if (root / "consent.txt").exists():
        consent = {int(x) for x in (root / "consent.txt").read_text(encoding="utf-8").split()}
    return Dataset(root, key, stores, consent)


def default_plan(k: int, alpha: int, city: str = "city0", consent: bool = False) -> CompositionPlan:
    nodes = {
        "DS1": PlanNode("DS1", "DS1", k, const={"city": city}),
        "DS2": PlanNode("DS2", "DS2", k),
        "DS3": PlanNode("DS3", "DS3", k),
    }
    params = {"alpha": str(alpha), "consent": "on" if consent else "off"}
    return CompositionPlan(nodes, [("DS1", "DS2"), ("DS2", "DS3")], params)


def build_services(
    dataset: Dataset, plan: CompositionPlan, *, offline: bool = False
) -> dict[str, DataService]:
    services = {}
    for node in plan.nodes.values():
        if node.service in services:
            continue
        store = dataset.stores.get(node.service)
        if store is None:
            raise PlanError(f"plan node {node.node_id} uses service {node.service!r} with no event log")
        config = ServiceConfig(node.service, k=node.k, identifier_attr=node.identifier_attr, offline=offline)
        services[node.service] = DataService(config, store, consent=ConsentTable(set(dataset.consent)))
    if offline:
        for node_id in plan.order:
            if plan.parents(node_id):
                services[plan.nodes[node_id].service].offline_precompute(effective_k(plan, node_id))
    return services


@dataclass
class RunOutcome:
    table: ResultTable
    transcript: InvocationTranscript
    metrics: dict[str, object]


def run_once(
    dataset: Dataset,
    plan: CompositionPlan,
    *,
    mode: str,
    alpha: int,
    optimizations: frozenset[str] = frozenset(),
    transport: str = "inproc",
    services: dict[str, DataService] | None = None,
) -> RunOutcome:
    if mode not in ("protected", "unprotected"):
        raise ValueError("mode must be protected or unprotected")
    opts = frozenset(optimizations) if mode == "protected" else frozenset()
    if services is None:
        services = build_services(dataset, plan, offline="offline" in opts)
    with ExitStack() as stack:
        channel: Transport
        if transport == "tcp":
            servers = {n: stack.enter_context(ServiceServer(s)) for n, s in services.items()}
            channel = TcpTransport({n: srv.address for n, srv in servers.items()})
            stack.callback(channel.close)
        else:
            channel = InProcessTransport(services)
        started = time.perf_counter()
        table, transcript = execute_plan(
            plan,
            channel,
            alpha=alpha,
            consent_enabled="consent" in opts,
            cache="cache" in opts,
            protocol="hybrid" if mode == "protected" else "none",
        )
        elapsed = (time.perf_counter() - started) * 1000
    transcript.store_versions = {n: s.store.version for n, s in services.items()}
    stats = transcript.stats
    k = max(node.k for node in plan.nodes.values())
    metrics = {
        "dataset_size": len(dataset.stores[plan.nodes[plan.roots[0]].service]),
        "alpha_k": alpha * k,
        "mode": mode,
        "optimizations": "+".join(sorted(opts)) or "none",
        "wall_time_ms": round(elapsed, 3),
        "selectivity_queries": stats.get("selectivity_queries", 0),
        "invocations": stats.get("invocations", 0) + stats.get("root_invocations", 0),
        "reused_ranges": stats.get("reused_ranges", 0),
        "result_rows": len(table),
    }
    return RunOutcome(table, transcript, metrics)


def write_metrics(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
        writer.writeheader()
        writer.writerows(rows)


def _plan_alpha(config: ExperimentConfig, plan: CompositionPlan) -> int:
    if "alpha" in plan.params and int(plan.params["alpha"]) not in config.alphas:
        raise PlanError(f"plan sets alpha={plan.params['alpha']} but the config allows {list(config.alphas)}")
    return int(plan.params.get("alpha", config.alpha))


def run(config: ExperimentConfig, plan: CompositionPlan, mode: str, out: str | Path) -> RunOutcome:
    """Execute ``plan`` on the first configured size; write results, transcript and metrics."""
    alpha = _plan_alpha(config, plan)
    size = config.dataset_sizes[0]
    dataset = load_dataset(Path(config.data_dir) / f"n{size}", config.bucket_size)
    opts = set(config.optimizations)
    if plan.params.get("consent") == "on":
        opts.add("consent")
    elif plan.params.get("consent") == "off":
        opts.discard("consent")
    outcome = run_once(
        dataset, plan, mode=mode, alpha=alpha, optimizations=frozenset(opts), transport=config.transport
    )
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    outcome.table.to_csv(out / "results.csv")
    outcome.transcript.dump(out / "transcript.ndjson")
    (out / "plan.txt").write_text(plan.to_text(), encoding="utf-8")
    write_metrics(out / "metrics.csv", [outcome.metrics])
    return outcome


def ablations(optimizations: frozenset[str]) -> list[frozenset[str]]:
    """No optimization, each enabled one alone, then all of them together."""
    sets = [frozenset()]
    for opt in sorted(optimizations):
        sets.append(frozenset({opt}))
    if len(optimizations) > 1:
        sets.append(frozenset(optimizations))
    return sets


def bench(config: ExperimentConfig, out: str | Path, plan: CompositionPlan | None = None) -> list[dict]:
    """One metrics row per (size, mode, alpha, optimization set), wall time averaged over repetitions."""
    rows = []
    for size in config.dataset_sizes:
        root = Path(config.data_dir) / f"n{size}"
        if not root.exists():
            gen_data(config.seed, [size], config.cities, config.data_dir, domain_size=config.domain_size)
        dataset = load_dataset(root, config.bucket_size)
        cells = [("unprotected", config.alpha, frozenset())]
        cells += [("protected", a, opts) for a in config.alphas for opts in ablations(config.optimizations)]
        for mode, alpha, opts in cells:
            the_plan = plan or default_plan(config.k, alpha, config.city)
            times, last = [], None
            for _ in range(config.repetitions):
                last = run_once(
                    dataset, the_plan, mode=mode, alpha=alpha, optimizations=opts, transport=config.transport
                )
                times.append(last.metrics["wall_time_ms"])
            row = dict(last.metrics, wall_time_ms=round(sum(times) / len(times), 3))
            rows.append(row)
    write_metrics(out, rows)
    return rows


def audit_run(
    transcript_path: str | Path, stores_dir: str | Path, plan_path: str | Path | None = None
) -> AuditReport:
    """Audit a saved transcript against the dataset directory it was produced from."""
    transcript = InvocationTranscript.load(transcript_path)
    candidates = [plan_path] if plan_path else []
    candidates += [Path(transcript_path).parent / "plan.txt", Path(stores_dir) / "plan.txt"]
    found = next((Path(p) for p in candidates if p and Path(p).exists()), None)
    if found is None:
        raise FileNotFoundError("no plan file given and none found next to the transcript")
    plan = CompositionPlan.load(found)
    if transcript.plan_fingerprint and plan.fingerprint() != transcript.plan_fingerprint:
        raise PlanError(f"{found} does not match the plan recorded in the transcript")
    dataset = load_dataset(stores_dir)
    return verify_k_protection(transcript, dataset.stores, plan, {n: dataset.consent for n in dataset.stores})
