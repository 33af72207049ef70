"""Keyed, deterministic, strictly order-preserving encryption of integer ids.

The built-in scheme maps plaintext ``p`` to the cumulative sum of keyed
pseudo-random gaps ``g(0) + ... + g(p)`` with every gap in ``[1, 2**32]``.
Gaps are produced by a counter-mode splitmix64 mixer, so any gap is a pure
function of ``(seed, i)`` and the ciphertext table can be rebuilt in any
process from the key alone.

Other schemes can be dropped in by subclassing :class:`OrderPreservingScheme`;
the rest of the package only relies on ``encrypt``/``decrypt`` and integer
comparison of ciphertexts.
"""

from __future__ import annotations

import abc
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import NewType

import numpy as np

from .errors import InvalidDomainError, OutOfDomainError, UnknownCiphertextError

EncryptedId = NewType("EncryptedId", int)

MAX_DOMAIN = 2**31  # keeps every ciphertext below 2**63
TABLE_LIMIT = 2**20  # domains up to this size get an eager prefix-sum table
BLOCK = 2**16

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MUL1
    z = (z ^ (z >> np.uint64(27))) * _MUL2
    return z ^ (z >> np.uint64(31))


def gaps(seed: int, start: int, stop: int) -> np.ndarray:
    """Keyed gaps ``g(start) .. g(stop - 1)``, each in ``[1, 2**32]``."""
    with np.errstate(over="ignore"):
        base = _mix(np.array([seed & (2**64 - 1)], dtype=np.uint64) + _GAMMA)[0]
        idx = np.arange(start + 1, stop + 1, dtype=np.uint64)
        z = _mix(base + idx * _GAMMA)
    return (z >> np.uint64(32)) + np.uint64(1)


@dataclass(frozen=True)
class OpesKey:
    seed: int
    domain_size: int


def keygen(seed: int, domain_size: int) -> OpesKey:
    if seed < 0 or seed >= 2**64:
        raise InvalidDomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    if domain_size < 1:
        raise InvalidDomainError(f"domain_size must be >= 1, got {domain_size}")
    if domain_size > MAX_DOMAIN:
        raise InvalidDomainError(f"domain_size must be <= 2**31, got {domain_size}")
    return OpesKey(seed=int(seed), domain_size=int(domain_size))


class OrderPreservingScheme(abc.ABC):
    """Interface every order-preserving scheme implements."""

    def __init__(self, key: OpesKey):
        self.key = key

    @property
    def domain_size(self) -> int:
        return self.key.domain_size

    def _check(self, plaintext: int) -> None:
        if not 0 <= plaintext < self.key.domain_size:
            raise OutOfDomainError(
                f"plaintext {plaintext} outside [0, {self.key.domain_size})"
            )

    @abc.abstractmethod
    def encrypt(self, plaintext: int) -> EncryptedId: ...

    @abc.abstractmethod
    def decrypt(self, cipher: int) -> int: ...

    def encrypt_many(self, plaintexts) -> list[EncryptedId]:
        return [self.encrypt(int(p)) for p in plaintexts]


class GapSumScheme(OrderPreservingScheme):
    """Cumulative sum of keyed positive gaps.

    Prefix sums are materialized in blocks of ``BLOCK`` plaintexts on first
    use; small domains (``<= TABLE_LIMIT``) build the whole table eagerly.
    """

    def __init__(self, key: OpesKey, precompute: bool | None = None):
        super().__init__(key)
        self._blocks: list[np.ndarray] = []
        self._lock = threading.Lock()
        if precompute is None:
            precompute = key.domain_size <= TABLE_LIMIT
        self._table: np.ndarray | None = None
        if precompute:
            self._table = np.cumsum(gaps(key.seed, 0, key.domain_size), dtype=np.uint64)

    def _block(self, b: int) -> np.ndarray:
        with self._lock:
            while len(self._blocks) <= b:
                n = len(self._blocks)
                start = n * BLOCK
                stop = min(start + BLOCK, self.key.domain_size)
                offset = self._blocks[-1][-1] if self._blocks else np.uint64(0)
                self._blocks.append(np.cumsum(gaps(self.key.seed, start, stop), dtype=np.uint64) + offset)
            return self._blocks[b]

    def encrypt(self, plaintext: int) -> EncryptedId:
        self._check(plaintext)
        if self._table is not None:
            return EncryptedId(int(self._table[plaintext]))
        return EncryptedId(int(self._block(plaintext // BLOCK)[plaintext % BLOCK]))

    def encrypt_many(self, plaintexts) -> list[EncryptedId]:
        if self._table is not None:
            arr = np.asarray(plaintexts, dtype=np.int64)
            if arr.size and (arr.min() < 0 or arr.max() >= self.key.domain_size):
                bad = int(arr[(arr < 0) | (arr >= self.key.domain_size)][0])
                raise OutOfDomainError(f"plaintext {bad} outside [0, {self.key.domain_size})")
            return [EncryptedId(int(c)) for c in self._table[arr]]
        return super().encrypt_many(plaintexts)

    def decrypt(self, cipher: int) -> int:
        cipher = int(cipher)
        if cipher < 1:
            raise UnknownCiphertextError(f"{cipher} is not a ciphertext under this key")
        if self._table is not None:
            pos = int(np.searchsorted(self._table, np.uint64(cipher)))
            if pos < len(self._table) and int(self._table[pos]) == cipher:
                return pos
            raise UnknownCiphertextError(f"{cipher} is not a ciphertext under this key")
        nblocks = -(-self.key.domain_size // BLOCK)
        for b in range(nblocks):
            block = self._block(b)
            if int(block[-1]) >= cipher:
                pos = int(np.searchsorted(block, np.uint64(cipher)))
                if int(block[pos]) == cipher:
                    return b * BLOCK + pos
                break
        raise UnknownCiphertextError(f"{cipher} is not a ciphertext under this key")


@lru_cache(maxsize=32)
def scheme_for(key: OpesKey) -> OrderPreservingScheme:
    return GapSumScheme(key)


def encrypt(key: OpesKey, plaintext: int) -> EncryptedId:
    return scheme_for(key).encrypt(plaintext)


def decrypt(key: OpesKey, cipher: int) -> int:
    """Service-side inverse of :func:`encrypt`. The mediator never calls this."""
    return scheme_for(key).decrypt(cipher)
