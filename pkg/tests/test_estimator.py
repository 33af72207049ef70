import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from kprotect.estimator import KProtectionGeneralizer


@pytest.fixture
def ids():
    return np.random.default_rng(0).choice(2**16, size=400, replace=False)


def test_ranges_contain_input_and_hold_k(ids):
    gen = KProtectionGeneralizer(k=3, alpha=5, domain_size=2**16).fit(ids)
    bounds = gen.transform(ids)
    assert bounds.shape == (400, 2)
    for x, (lo, hi) in zip(ids, bounds):
        assert lo < x <= hi
        assert np.sum((ids > lo) & (ids <= hi)) >= 3


def test_timestamps_column(ids):
    X = np.column_stack([ids, np.arange(len(ids)) // 100])
    gen = KProtectionGeneralizer(k=2, alpha=3, domain_size=2**16).fit(X)
    out = gen.transform(X)
    assert np.all(out[:, 0] < ids) and np.all(ids <= out[:, 1])


def test_cache_reduces_probes(ids):
    cold = KProtectionGeneralizer(k=2, cache=False, domain_size=2**16).fit(ids)
    warm = KProtectionGeneralizer(k=2, cache=True, domain_size=2**16).fit(ids)
    assert np.array_equal(cold.transform(ids), warm.transform(ids))
    assert warm.selectivity_queries_ < cold.selectivity_queries_


def test_sklearn_protocol(ids):
    gen = KProtectionGeneralizer(k=4)
    assert clone(gen).get_params()["k"] == 4
    with pytest.raises(NotFittedError):
        gen.transform(ids)
    out = make_pipeline(KProtectionGeneralizer(k=2, domain_size=2**16)).fit_transform(ids)
    assert out.shape == (400, 2)
    assert list(gen.get_feature_names_out()) == ["range_lo", "range_hi"]


def test_input_validation(ids):
    with pytest.raises(ValueError):
        KProtectionGeneralizer(domain_size=2**16).fit(np.array([1, 1, 2]))
    with pytest.raises(ValueError):
        KProtectionGeneralizer(k=5, alpha=5, domain_size=2**16).fit(ids[:10])
    with pytest.raises(ValueError):
        KProtectionGeneralizer(domain_size=2**16).fit(np.zeros((5, 3)))
