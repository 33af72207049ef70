"""Protocol messages and their newline-delimited JSON encoding.

Ciphertexts travel as unsigned decimal strings and unbounded range ends as
``"-inf"``/``"+inf"``. Unknown fields are ignored when decoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .errors import KProtectError, MalformedMessageError
from .ranges import CandidateRange, IdRange

SELECTIVITY_REQ = "SELECTIVITY_REQ"
SELECTIVITY_RESP = "SELECTIVITY_RESP"
CANDIDATES_REQ = "CANDIDATES_REQ"
CANDIDATES_RESP = "CANDIDATES_RESP"
INVOKE_REQ = "INVOKE_REQ"
INVOKE_RESP = "INVOKE_RESP"
CONSENT_REQ = "CONSENT_REQ"
CONSENT_RESP = "CONSENT_RESP"
ERROR = "ERROR"

KINDS = frozenset(
    {
        SELECTIVITY_REQ,
        SELECTIVITY_RESP,
        CANDIDATES_REQ,
        CANDIDATES_RESP,
        INVOKE_REQ,
        INVOKE_RESP,
        CONSENT_REQ,
        CONSENT_RESP,
        ERROR,
    }
)
REQUESTS = frozenset({SELECTIVITY_REQ, CANDIDATES_REQ, INVOKE_REQ, CONSENT_REQ})


@dataclass(frozen=True)
class ProtocolMessage:
    kind: str
    request_id: int
    range: IdRange | None = None
    k: int | None = None
    count: int | None = None
    mid: int | None = None
    ranges: tuple[CandidateRange, ...] | None = None
    tuples: tuple[tuple[int, dict], ...] | None = None
    code: str | None = None
    detail: str | None = None
    # extensions: root invocation by attribute constant, consent lookups
    where: dict[str, str] | None = field(default=None)
    subject: int | None = None
    consented: bool | None = None
    mode: str | None = None  # "domain": mid is the domain midpoint of the range


def _bound(value: int | None, inf: str) -> str:
    return inf if value is None else str(int(value))


def range_to_wire(rng: IdRange) -> dict[str, Any]:
    return {
        "lo": _bound(rng.lo, "-inf"),
        "lo_inc": rng.lo_inclusive,
        "hi": _bound(rng.hi, "+inf"),
        "hi_inc": rng.hi_inclusive,
    }


def _parse_bound(raw: Any, inf: str) -> int | None:
    if raw == inf:
        return None
    if isinstance(raw, str) and raw.isdigit():
        return int(raw)
    raise MalformedMessageError(f"bad range bound {raw!r}")


def range_from_wire(obj: Any) -> IdRange:
    if not isinstance(obj, dict):
        raise MalformedMessageError("range must be an object")
    try:
        return IdRange(
            _parse_bound(obj["lo"], "-inf"),
            _parse_bound(obj["hi"], "+inf"),
            bool(obj["lo_inc"]),
            bool(obj["hi_inc"]),
        )
    except KeyError as exc:
        raise MalformedMessageError(f"range missing {exc.args[0]!r}") from exc


def to_dict(msg: ProtocolMessage) -> dict[str, Any]:
    out: dict[str, Any] = {"id": msg.request_id, "kind": msg.kind}
    if msg.range is not None:
        out["range"] = range_to_wire(msg.range)
    if msg.k is not None:
        out["k"] = msg.k
    if msg.count is not None:
        out["count"] = msg.count
    if msg.mid is not None:
        out["mid"] = str(msg.mid)
    if msg.ranges is not None:
        out["ranges"] = [dict(range_to_wire(c.range), count=c.count) for c in msg.ranges]
    if msg.tuples is not None:
        out["tuples"] = [{"id": str(i), "attrs": dict(a)} for i, a in msg.tuples]
    if msg.code is not None:
        out["code"] = msg.code
    if msg.detail:
        out["detail"] = msg.detail
    if msg.where is not None:
        out["where"] = dict(msg.where)
    if msg.subject is not None:
        out["subject"] = str(msg.subject)
    if msg.consented is not None:
        out["consented"] = msg.consented
    if msg.mode is not None:
        out["mode"] = msg.mode
    return out


def encode(msg: ProtocolMessage) -> str:
    return json.dumps(to_dict(msg), separators=(",", ":"), sort_keys=False)


def _cipher(raw: Any, what: str) -> int:
    if isinstance(raw, str) and raw.isdigit():
        return int(raw)
    raise MalformedMessageError(f"bad {what} {raw!r}")


def from_dict(obj: Any) -> ProtocolMessage:
    try:
        return _from_dict(obj)
    except (TypeError, AttributeError, ValueError) as exc:
        if isinstance(exc, KProtectError):
            raise
        raise MalformedMessageError(f"malformed message: {exc}") from exc


def _from_dict(obj: Any) -> ProtocolMessage:
    if not isinstance(obj, dict):
        raise MalformedMessageError("message must be an object")
    kind = obj.get("kind")
    rid = obj.get("id")
    if not isinstance(kind, str):
        raise MalformedMessageError("missing kind")
    if not isinstance(rid, int) or isinstance(rid, bool) or rid < 0:
        raise MalformedMessageError("missing or invalid id")
    rng = range_from_wire(obj["range"]) if "range" in obj else None
    ranges = None
    if "ranges" in obj:
        if not isinstance(obj["ranges"], list):
            raise MalformedMessageError("ranges must be a list")
        ranges = tuple(CandidateRange(range_from_wire(r), int(r.get("count", 0))) for r in obj["ranges"])
    tuples = None
    if "tuples" in obj:
        if not isinstance(obj["tuples"], list):
            raise MalformedMessageError("tuples must be a list")
        tuples = tuple((_cipher(t.get("id"), "tuple id"), dict(t.get("attrs", {}))) for t in obj["tuples"])
    k = obj.get("k")
    if k is not None and (not isinstance(k, int) or isinstance(k, bool)):
        raise MalformedMessageError("k must be an integer")
    return ProtocolMessage(
        kind=kind,
        request_id=rid,
        range=rng,
        k=k,
        count=obj.get("count"),
        mid=_cipher(obj["mid"], "mid") if "mid" in obj else None,
        ranges=ranges,
        tuples=tuples,
        code=obj.get("code"),
        detail=obj.get("detail"),
        where=obj.get("where"),
        subject=_cipher(obj["subject"], "subject") if "subject" in obj else None,
        consented=obj.get("consented"),
        mode=obj.get("mode"),
    )


def decode(line: str) -> ProtocolMessage:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedMessageError(f"not JSON: {exc.msg}") from exc
    return from_dict(obj)
