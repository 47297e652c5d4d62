"""Wire envelope and length-prefixed framing.

A frame is a 4-byte big-endian unsigned length ``N`` followed by ``N`` bytes
of UTF-8 JSON: ``{"v", "kind", "msg_id", "correlates", "payload"}`` in that
key order.
"""
from __future__ import annotations

import io
import json
import struct
import uuid
from dataclasses import dataclass, field
from typing import BinaryIO

from fedlens.errors import (
    MalformedPayload,
    OversizePayload,
    TruncatedFrame,
    UnknownKind,
    UnsupportedVersion,
)

VERSION = 1
MAX_FRAME = 64 * 1024 * 1024
_HEADER = struct.Struct(">I")

REGISTER = "REGISTER"
REGISTER_ACK = "REGISTER_ACK"
QUERY = "QUERY"
RESPONSE = "RESPONSE"
MODEL_BROADCAST = "MODEL_BROADCAST"
MODEL_UPDATE = "MODEL_UPDATE"
ERROR = "ERROR"
BYE = "BYE"

REQUIRED_KEYS = {
    REGISTER: frozenset({"schema"}),
    REGISTER_ACK: frozenset({"client_id", "epoch", "salt"}),
    QUERY: frozenset({"spec"}),
    RESPONSE: frozenset({"query_id", "client_id"}),
    MODEL_BROADCAST: frozenset({"round", "model"}),
    MODEL_UPDATE: frozenset({"round", "model", "k_n"}),
    ERROR: frozenset({"code", "message"}),
    BYE: frozenset(),
}
KINDS = frozenset(REQUIRED_KEYS)
REPLY_KINDS = frozenset({RESPONSE, REGISTER_ACK, MODEL_UPDATE})


@dataclass(frozen=True)
class Envelope:
    kind: str
    payload: dict = field(default_factory=dict)
    msg_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    correlates: str | None = None
    v: int = VERSION

    def __post_init__(self):
        if self.v != VERSION:
            raise UnsupportedVersion(f"protocol version {self.v!r} is not supported")
        if self.kind not in KINDS:
            raise UnknownKind(f"unknown envelope kind {self.kind!r}")
        if not isinstance(self.payload, dict):
            raise MalformedPayload("payload must be a JSON object")
        missing = REQUIRED_KEYS[self.kind] - self.payload.keys()
        if missing:
            raise MalformedPayload(f"{self.kind} payload lacks {sorted(missing)}")
        if self.kind in REPLY_KINDS and self.correlates is None:
            raise MalformedPayload(f"{self.kind} must correlate to a request")

    def reply(self, kind: str, payload: dict) -> Envelope:
        return Envelope(kind, payload, correlates=self.msg_id)

    def to_dict(self) -> dict:
        return {"v": self.v, "kind": self.kind, "msg_id": self.msg_id, "correlates": self.correlates, "payload": self.payload}


def encode_json(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8")


def frame_body(body: bytes) -> bytes:
    """Prefix already-encoded bytes with their big-endian u32 length."""
    if len(body) > MAX_FRAME:
        raise OversizePayload(f"frame body of {len(body)} bytes exceeds {MAX_FRAME}")
    return _HEADER.pack(len(body)) + body


def frame(envelope: Envelope) -> bytes:
    try:
        body = encode_json(envelope.to_dict())
    except (TypeError, ValueError) as exc:
        raise MalformedPayload(f"payload is not serializable: {exc}") from exc
    return frame_body(body)


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def decode_body(body: bytes) -> Envelope:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedPayload(f"frame is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedPayload("frame must hold a JSON object")
    if doc.get("v") != VERSION:
        raise UnsupportedVersion(f"protocol version {doc.get('v')!r} is not supported")
    if doc.get("kind") not in KINDS:
        raise UnknownKind(f"unknown envelope kind {doc.get('kind')!r}")
    msg_id = doc.get("msg_id")
    correlates = doc.get("correlates")
    if not isinstance(msg_id, str) or not (correlates is None or isinstance(correlates, str)):
        raise MalformedPayload("msg_id/correlates must be strings")
    return Envelope(doc["kind"], doc.get("payload"), msg_id, correlates)


def read_frame(stream: BinaryIO) -> Envelope | None:
    """Read one frame from a stream; ``None`` on clean EOF at a frame boundary."""
    head = _read_exact(stream, 4)
    if not head:
        return None
    if len(head) < 4:
        raise TruncatedFrame("stream ended inside the length prefix")
    (n,) = _HEADER.unpack(head)
    if n > MAX_FRAME:
        raise OversizePayload(f"announced frame of {n} bytes exceeds {MAX_FRAME}")
    body = _read_exact(stream, n)
    if len(body) < n:
        raise TruncatedFrame(f"expected {n} payload bytes, got {len(body)}")
    return decode_body(body)


def unframe(data: bytes | bytearray | memoryview | BinaryIO) -> Envelope:
    stream = io.BytesIO(bytes(data)) if isinstance(data, (bytes, bytearray, memoryview)) else data
    env = read_frame(stream)
    if env is None:
        raise TruncatedFrame("empty stream")
    return env
