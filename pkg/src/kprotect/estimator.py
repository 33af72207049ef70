"""scikit-learn style wrapper around one service's candidate ranges.

``fit`` loads identifiers (optionally with insertion timestamps) into a
private store; ``transform`` maps each identifier to the plaintext bounds
``(lo, hi]`` of the range the hybrid protocol would invoke the service
with. Unbounded ends are ``-inf``/``+inf``.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .mediator import GenCache, Mediator
from .opes import keygen
from .service import DataService, ServiceConfig
from .store import BucketPolicy, TimestampedStore


class KProtectionGeneralizer(TransformerMixin, BaseEstimator):
    """Generalize identifiers to ranges holding at least ``k`` stored identifiers.

    Parameters
    ----------
    k : int
        Protection factor.
    alpha : int
        Replay-resistance multiplier; narrowing stops at ``alpha * k`` ids.
    bucket_size : int
        Identifiers per bucket when the store is partitioned.
    domain_size : int
        Identifiers must lie in ``[0, domain_size)``.
    random_state : int
        Seed of the order-preserving key.
    cache : bool
        Reuse ranges across identifiers within one ``transform`` call.
    """

    def __init__(
        self,
        k: int = 2,
        alpha: int = 5,
        bucket_size: int = 50,
        domain_size: int = 2**20,
        random_state: int = 0,
        cache: bool = True,
    ):
        self.k = k
        self.alpha = alpha
        self.bucket_size = bucket_size
        self.domain_size = domain_size
        self.random_state = random_state
        self.cache = cache

    def fit(self, X, y=None):
        """``X`` is a column of ids, or ``(id, timestamp)`` rows."""
        ids, ts = _split_columns(X)
        if len(np.unique(ids)) != len(ids):
            raise ValueError("identifiers must be unique")
        if len(ids) < self.alpha * self.k:
            raise ValueError(f"need at least alpha*k = {self.alpha * self.k} identifiers, got {len(ids)}")
        store = TimestampedStore(keygen(self.random_state, self.domain_size))
        order = np.lexsort((ids, ts))
        first = ts[order[0]]
        partitioned = False
        for i in order:
            if not partitioned and ts[i] != first:
                store.partition_buckets(BucketPolicy.fixed_count(self.bucket_size))
                partitioned = True
            store._set_clock(int(ts[i] - first))
            store.insert(int(ids[i]))
        if not partitioned:
            store.partition_buckets(BucketPolicy.fixed_count(self.bucket_size))
        self.store_ = store
        self.service_ = DataService(ServiceConfig("estimator", k=self.k), store)
        self.n_ids_ = len(ids)
        self.n_features_in_ = 1 if np.ndim(X) == 1 else np.shape(X)[1]
        return self

    def transform(self, X) -> np.ndarray:
        """``(n, 2)`` float array of plaintext range bounds, lower end exclusive."""
        check_is_fitted(self, "store_")
        ids, _ = _split_columns(X)
        mediator = Mediator.for_services(self.service_)
        cache = GenCache() if self.cache else None
        out = np.empty((len(ids), 2), dtype=float)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for row, pid in enumerate(ids):
                x = self.store_.encrypt(int(pid))
                hit = cache.find("estimator", x, self.k) if cache is not None else None
                if hit is not None:
                    rng = hit.range
                else:
                    rng = mediator.hybrid_generalize("estimator", x, self.k, self.alpha, cache=cache).range
                out[row] = self._plain_bounds(rng)
        self.selectivity_queries_ = mediator.stats["selectivity_queries"]
        return out

    def _plain_bounds(self, rng) -> tuple[float, float]:
        # candidate bounds are ciphertexts of stored or boundary ids
        lo = -np.inf
        if rng.lo is not None:
            lo = float(self.store_.decrypt(rng.lo) - (1 if rng.lo_inclusive else 0))
        hi = np.inf
        if rng.hi is not None:
            hi = float(self.store_.decrypt(rng.hi) - (0 if rng.hi_inclusive else 1))
        return lo, hi

    def get_feature_names_out(self, input_features=None) -> np.ndarray:
        return np.array(["range_lo", "range_hi"], dtype=object)


def _split_columns(X) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(X)
    if arr.ndim == 1:
        return arr.astype(np.int64), np.zeros(len(arr), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] not in (1, 2):
        raise ValueError("X must be a column of ids or (id, timestamp) rows")
    ids = arr[:, 0].astype(np.int64)
    ts = arr[:, 1].astype(np.int64) if arr.shape[1] == 2 else np.zeros(len(arr), dtype=np.int64)
    return ids, ts
