"""Wire format: newline-delimited JSON messages with per-connection seq.

One message per line, UTF-8.  Every message is an object with ``type``,
``seq``, and a type-specific ``payload``; ``ts_ms`` is optional.  Clients
number their messages with strictly increasing integers.  Retransmitting
the most recent message (same seq) is legal and idempotent: the server
acknowledges again without applying twice.  A seq below the last seen
one is a regression error.

Message types and required payload fields:

  hit          pmu_id, location, confidence, timestamp_ms
  sword_clash  pmu_id, confidence, timestamp_ms
  override     target_seq, location
  command      command (plus command-specific arguments)
  state        snapshot
  ack          ack_seq
  error        message
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

MESSAGE_TYPES = ("hit", "sword_clash", "override", "command", "state", "ack", "error")

REQUIRED_PAYLOAD = {
    "hit": ("pmu_id", "location", "confidence", "timestamp_ms"),
    "sword_clash": ("pmu_id", "confidence", "timestamp_ms"),
    "override": ("target_seq", "location"),
    "command": ("command",),
    "state": ("snapshot",),
    "ack": ("ack_seq",),
    "error": ("message",),
}


class ProtocolError(ValueError):
    """Malformed or out-of-order wire traffic."""

    def __init__(self, message: str, code: str = "protocol"):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class WireMessage:
    type: str
    seq: int
    payload: dict = field(default_factory=dict)
    ts_ms: float | None = None

    def __post_init__(self):
        if self.type not in MESSAGE_TYPES:
            raise ProtocolError(f"unknown message type {self.type!r}", code="unknown_type")
        if not isinstance(self.seq, int) or isinstance(self.seq, bool) or self.seq < 1:
            raise ProtocolError(f"seq must be a positive integer, got {self.seq!r}")
        if not isinstance(self.payload, dict):
            raise ProtocolError("payload must be an object")
        missing = [f for f in REQUIRED_PAYLOAD[self.type] if f not in self.payload]
        if missing:
            raise ProtocolError(f"{self.type} payload missing fields {missing}")


def encode(msg: WireMessage) -> str:
    doc = {"type": msg.type, "seq": msg.seq, "payload": msg.payload}
    if msg.ts_ms is not None:
        doc["ts_ms"] = msg.ts_ms
    return json.dumps(doc, sort_keys=True) + "\n"


def decode(line: str | bytes) -> WireMessage:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"line is not UTF-8: {exc}") from exc
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProtocolError("message must be a JSON object")
    for name in ("type", "seq"):
        if name not in doc:
            raise ProtocolError(f"message missing {name!r} field")
    ts = doc.get("ts_ms")
    return WireMessage(
        type=doc["type"],
        seq=doc["seq"],
        payload=doc.get("payload", {}),
        ts_ms=None if ts is None else float(ts),
    )


class SeqTracker:
    """Per-connection inbound ordering: new, duplicate, or regression."""

    def __init__(self):
        self.last = 0

    def check(self, seq: int) -> str:
        """Returns "new" or "duplicate"; raises on regression."""
        if seq == self.last:
            return "duplicate"
        if seq < self.last:
            raise ProtocolError(
                f"seq {seq} after {self.last}: sequence numbers must not regress",
                code="seq_regression",
            )
        self.last = seq
        return "new"
