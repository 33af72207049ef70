"""Ordered log of every mediator/service message of one plan execution."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from . import wire
from .wire import ProtocolMessage


@dataclass(frozen=True)
class TranscriptEvent:
    seq: int
    edge: tuple[str, str]  # (parent label, node id)
    service: str
    direction: str  # "out" (mediator -> service) or "in"
    message: ProtocolMessage
    # mediator-side annotations, never sent on the wire
    episode: int | None = None
    target: int | None = None
    precise: bool = False

    def to_dict(self) -> dict:
        out = {
            "seq": self.seq,
            "edge": list(self.edge),
            "service": self.service,
            "dir": self.direction,
            "msg": wire.to_dict(self.message),
        }
        if self.episode is not None:
            out["episode"] = self.episode
        if self.target is not None:
            out["target"] = str(self.target)
        if self.precise:
            out["precise"] = True
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> TranscriptEvent:
        return cls(
            seq=obj["seq"],
            edge=tuple(obj["edge"]),
            service=obj["service"],
            direction=obj["dir"],
            message=wire.from_dict(obj["msg"]),
            episode=obj.get("episode"),
            target=int(obj["target"]) if "target" in obj else None,
            precise=bool(obj.get("precise", False)),
        )


@dataclass
class InvocationTranscript:
    execution_id: str = "exec-0"
    plan_fingerprint: str = ""
    alpha: int = 1
    protocol: str = "hybrid"
    store_versions: dict[str, int] = field(default_factory=dict)
    events: list[TranscriptEvent] = field(default_factory=list)
    stats: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.Lock()

    def append(self, **kwargs) -> TranscriptEvent:
        with self._lock:
            event = TranscriptEvent(seq=len(self.events), **kwargs)
            self.events.append(event)
            return event

    def __iter__(self) -> Iterator[TranscriptEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def requests(self, kind: str | None = None) -> list[TranscriptEvent]:
        return [
            e for e in self.events if e.direction == "out" and (kind is None or e.message.kind == kind)
        ]

    def messages(self) -> list[dict]:
        """Wire content only, for message-for-message comparisons."""
        return [dict(e.to_dict(), seq=None) for e in self.events]

    def header(self) -> dict:
        return {
            "type": "header",
            "execution_id": self.execution_id,
            "plan": self.plan_fingerprint,
            "alpha": self.alpha,
            "protocol": self.protocol,
            "store_versions": self.store_versions,
        }

    def to_ndjson(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines.extend(json.dumps(e.to_dict(), separators=(",", ":")) for e in self.events)
        return "\n".join(lines) + "\n"

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ndjson(), encoding="utf-8")

    @classmethod
    def from_ndjson(cls, text: str) -> InvocationTranscript:
        out = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("type") == "header":
                out.execution_id = obj.get("execution_id", out.execution_id)
                out.plan_fingerprint = obj.get("plan", "")
                out.alpha = int(obj.get("alpha", 1))
                out.protocol = obj.get("protocol", "hybrid")
                out.store_versions = {k: int(v) for k, v in obj.get("store_versions", {}).items()}
            else:
                out.events.append(TranscriptEvent.from_dict(obj))
        return out

    @classmethod
    def load(cls, path: str | Path) -> InvocationTranscript:
        return cls.from_ndjson(Path(path).read_text(encoding="utf-8"))
