"""Data services: a store behind the request/response protocol."""

from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable

from . import wire
from .errors import (
    KProtectError,
    MalformedMessageError,
    ProtocolViolationError,
    RateLimitedError,
    UnknownCiphertextError,
    UnsupportedMessageError,
)
from .ranges import IdRange
from .store import TimestampedStore
from .wire import ProtocolMessage

Sanitizer = Callable[[dict], dict]


@dataclass(frozen=True)
class ServiceConfig:
    name: str
    k: int = 1
    signature: tuple[tuple[str, str], ...] = ()
    identifier_attr: str = "ssn"
    offline: bool = False
    rate_limit: int | None = None  # max identical requests; None disables

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        for attr, direction in self.signature:
            if direction not in ("input", "output"):
                raise ValueError(f"bad direction {direction!r} for {attr}")

    @property
    def output_attrs(self) -> list[str]:
        return [a for a, d in self.signature if d == "output" and a != self.identifier_attr]


@dataclass
class ConsentTable:
    consented: set[int] = field(default_factory=set)

    def __contains__(self, plain_id: int) -> bool:
        return plain_id in self.consented


def identity(attrs: dict) -> dict:
    return attrs


def decade_of_birth(attrs: dict) -> dict:
    """Example hook: coarsen ``dob`` (``YYYY-MM-DD``) to its decade."""
    out = dict(attrs)
    dob = out.get("dob")
    if dob and dob[:4].isdigit():
        out["dob"] = f"{dob[:3]}0s"
    return out


class DataService:
    def __init__(
        self,
        config: ServiceConfig,
        store: TimestampedStore,
        sanitizer: Sanitizer | None = None,
        consent: ConsentTable | None = None,
    ):
        self.config = config
        self.store = store
        self.sanitizer = sanitizer or identity
        self.consent = consent or ConsentTable()
        self.transcript: list[tuple[ProtocolMessage, ProtocolMessage]] = []
        self._log_lock = threading.Lock()
        self._seen: Counter = Counter()

    @property
    def name(self) -> str:
        return self.config.name

    def set_consent(self, table: ConsentTable | Iterable[int]) -> None:
        if not isinstance(table, ConsentTable):
            table = ConsentTable(set(table))
        self.consent = table

    def consented(self, cipher: int) -> bool:
        try:
            plain = self.store.decrypt(cipher)
        except UnknownCiphertextError:
            return False
        return plain in self.consent

    def sanitize_hook(self, attrs: dict) -> dict:
        ident = self.config.identifier_attr
        kept = {a: v for a, v in attrs.items() if a != ident}
        out = self.sanitizer(dict(kept))
        if ident in out:
            raise ProtocolViolationError(f"sanitizer of {self.name} emitted the identifier attribute")
        return out

    def offline_precompute(self, k: int) -> None:
        """Build the incremental candidate-range state for ``k`` ahead of any query."""
        self.store.enable_offline(k)
        if len(self.store):
            self.store.candidate_ranges(IdRange.full(), k)

    def handle(self, msg: ProtocolMessage) -> ProtocolMessage:
        try:
            resp = self._dispatch(msg)
        except KProtectError as exc:
            resp = ProtocolMessage(wire.ERROR, msg.request_id, code=exc.code, detail=str(exc))
        with self._log_lock:
            self.transcript.append((msg, resp))
        return resp

    def handle_line(self, line: str) -> str:
        try:
            msg = wire.decode(line)
        except KProtectError as exc:
            return wire.encode(ProtocolMessage(wire.ERROR, 0, code=exc.code, detail=str(exc)))
        return wire.encode(self.handle(msg))

    def _dispatch(self, msg: ProtocolMessage) -> ProtocolMessage:
        rid = msg.request_id
        if msg.kind not in wire.REQUESTS:
            raise UnsupportedMessageError(f"unsupported kind {msg.kind!r}")
        if self.config.rate_limit is not None:
            sig = (msg.kind, msg.range, msg.k, msg.subject, tuple(sorted((msg.where or {}).items())))
            with self._log_lock:
                self._seen[sig] += 1
                if self._seen[sig] > self.config.rate_limit:
                    raise RateLimitedError(f"{msg.kind} repeated more than {self.config.rate_limit} times")
        if msg.kind == wire.CONSENT_REQ:
            if msg.subject is None:
                raise MalformedMessageError("CONSENT_REQ needs subject")
            return ProtocolMessage(wire.CONSENT_RESP, rid, subject=msg.subject, consented=self.consented(msg.subject))
        if msg.kind == wire.INVOKE_REQ and msg.where is not None:
            return ProtocolMessage(wire.INVOKE_RESP, rid, tuples=tuple(self._lookup(msg.where)))
        if msg.range is None:
            raise MalformedMessageError(f"{msg.kind} needs a range")
        if msg.kind == wire.SELECTIVITY_REQ:
            count = self.store.selectivity(msg.range)
            if msg.mode == "domain":
                mid = self.store.domain_midpoint(msg.range)
            else:
                mid = self.store.median(msg.range) if count else None
            return ProtocolMessage(wire.SELECTIVITY_RESP, rid, count=count, mid=mid)
        if msg.kind == wire.CANDIDATES_REQ:
            if msg.k is None or msg.k < 1:
                raise MalformedMessageError("CANDIDATES_REQ needs k >= 1")
            if self.config.offline and msg.k not in self.store.offline_ks:
                self.store.enable_offline(msg.k)
            ranges = self.store.candidate_ranges(msg.range, msg.k)
            return ProtocolMessage(wire.CANDIDATES_RESP, rid, ranges=tuple(ranges))
        tuples = self.store.query(msg.range, sanitize=self.sanitize_hook)
        return ProtocolMessage(wire.INVOKE_RESP, rid, tuples=tuple(tuples))

    def _lookup(self, where: dict) -> list[tuple[int, dict]]:
        if not isinstance(where, dict) or not where:
            raise MalformedMessageError("where must be a non-empty object")
        out = []
        for pid in self.store.live_ids():
            entry = self.store.entries[pid]
            if all(entry.attrs.get(a) == v for a, v in where.items()):
                out.append((entry.id, self.sanitize_hook(dict(entry.attrs))))
        return out


__all__ = [
    "ConsentTable",
    "DataService",
    "ServiceConfig",
    "decade_of_birth",
    "identity",
]
