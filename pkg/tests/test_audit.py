import math

import pytest
from conftest import random_federation
from hypothesis import given
from hypothesis import strategies as st

from kprotect import wire
from kprotect.audit import (
    breach_probability,
    check_round_bound,
    recount,
    replay_experiment,
    round_bound,
    verify_k_protection,
    verify_nesting,
)
from kprotect.errors import StaleSnapshotError
from kprotect.mediator import Mediator, execute_plan
from kprotect.opes import keygen
from kprotect.plan import CompositionPlan
from kprotect.ranges import IdRange
from kprotect.service import DataService, ServiceConfig
from kprotect.store import BucketPolicy, TimestampedStore
from kprotect.transcript import InvocationTranscript
from kprotect.wire import ProtocolMessage

PLAN = CompositionPlan.parse("node P input=const:a=1 k=3\nnode S input=parent k=1\nedge P S\n")


def adversarial_store() -> TimestampedStore:
    """The lower domain half around x holds k-1 = 2 ids."""
    store = TimestampedStore(keygen(4, 1024))
    for p in [10, 20, 600, 640, 680, 720, 760, 800, 840, 880, 920, 960]:
        store.insert(p)
    store.partition_buckets(BucketPolicy.whole())
    return store


def invoke(transcript, rng, target=None, precise=False, kind=wire.INVOKE_REQ):
    transcript.append(edge=("P", "S"), service="S", direction="out", target=target, precise=precise,
                      episode=1, message=ProtocolMessage(kind, len(transcript), range=rng))


def test_breach_probability():
    assert breach_probability(5, 5) == pytest.approx(0.0016, abs=1e-12)
    assert breach_probability(10, 5) == pytest.approx(0.0004, abs=1e-12)
    assert breach_probability(20, 5) == pytest.approx(0.0001, abs=1e-12)
    with pytest.raises(ValueError):
        breach_probability(0, 5)


def test_round_bound_values():
    assert round_bound(13, 1, 3) == math.ceil(math.log2(13 / 3)) + 2
    assert round_bound(40_000, 5, 5) == 13
    assert round_bound(10, 5, 5) == 2


def test_flags_precise_invocation_of_non_consenting(f13):
    t = InvocationTranscript()
    x = f13.encrypt(15)
    invoke(t, IdRange.point(x), target=x, precise=True)
    report = verify_k_protection(t, {"S": f13, "P": f13}, PLAN)
    assert not report.passed
    assert report.violations[0].recounted == 1 and report.violations[0].required == 3
    assert "holds 1 < k=3" in report.to_text()
    ok = verify_k_protection(t, {"S": f13, "P": f13}, PLAN, consent={"P": {15}})
    assert ok.passed and ok.consented_precise == 1


def test_passes_wide_invocations(f13):
    t = InvocationTranscript()
    invoke(t, IdRange.at_most(f13.encrypt(20)))
    assert verify_k_protection(t, {"S": f13}, PLAN).passed


def test_recount_includes_tombstones(f13):
    f13.delete(8)
    assert recount(f13, IdRange.at_most(f13.encrypt(20))) == 4


def test_stale_snapshot_rejected(f13):
    t = InvocationTranscript(store_versions={"S": f13.version})
    f13.insert(1)
    with pytest.raises(StaleSnapshotError):
        verify_k_protection(t, {"S": f13}, PLAN)


def test_domain_baseline_probe_flagged_hybrid_clean():
    store = adversarial_store()
    x = store.encrypt(10)
    m = Mediator.for_services(DataService(ServiceConfig("S"), store))
    m.domain_generalize("S", x, 3, edge=("P", "S"))
    report = verify_k_protection(m.transcript, {"S": store}, PLAN)
    assert [v.recounted for v in report.probe_violations] == [2]
    h = Mediator.for_services(DataService(ServiceConfig("S"), store))
    h.invoke_protected("S", x, 3, 2, edge=("P", "S"))
    assert verify_k_protection(h.transcript, {"S": store}, PLAN).passed


def test_round_bound_check():
    fed = random_federation(21, max_size=500)
    _, t = execute_plan(fed.plan, fed.services())
    assert check_round_bound(t, fed.stores, fed.alpha, fed.plan)
    report = verify_k_protection(t, fed.stores, fed.plan)
    assert report.rounds_per_edge
    assert all(s["max"] <= s["bound"] for s in report.rounds_per_edge.values())


def test_verify_nesting_cases(f13):
    c = f13.encrypt
    snap = f13.snapshot()
    wide, narrow = IdRange.at_most(c(100)), IdRange.at_most(c(20))
    assert verify_nesting([(wide, snap), (narrow, snap)], 15, 3) is True
    assert verify_nesting([(narrow, snap), (wide, snap)], 15, 3) is False
    assert verify_nesting([(IdRange.at_most(c(8)), snap)] * 2, 8, 3) is False  # overlap of 2 < k
    assert verify_nesting([(wide, snap)], 999, 3) is None


def test_verify_nesting_from_transcripts(f13):
    runs = []
    for _ in range(2):
        m = Mediator.for_services(DataService(ServiceConfig("S"), f13))
        m.invoke_protected("S", f13.encrypt(15), 2, 2)
        runs.append((m.transcript, f13.snapshot()))
    assert verify_nesting(runs, 15, 2) is True


def test_replay_experiment_small():
    store = TimestampedStore(keygen(2, 2**14))
    for p in range(0, 2**14, 40):
        store.insert(p)
    store.partition_buckets(BucketPolicy.fixed_count(60))
    schedule = [list(range(7 + 40 * j, 2**14, 997)) for j in range(3)]
    result = replay_experiment(store, 4000, 3, 4, schedule, trials=200, seed=1)
    assert result.versions == 4
    assert result.breaches == 0
    assert result.formula == pytest.approx(1 / 144)


@given(alpha=st.integers(1, 50), k=st.integers(1, 50))
def test_breach_probability_formula(alpha, k):
    assert breach_probability(alpha, k) * (alpha * k) ** 2 == pytest.approx(1.0)
