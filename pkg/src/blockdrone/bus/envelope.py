"""Wire protocol for the topic bus.

Every message travels as one UTF-8 JSON object ("envelope"):

    {"op": "publish", "topic": "/tello/cmd_vel", "msg": 1}
    {"op": "subscribe", "topic": "/tello/odom"}

Framing is transport-specific: TCP delimits envelopes with '\\n', WebSocket
carries one envelope per text frame.  The JSON itself never contains a raw
newline, so the same bytes are valid on both transports.

Encoding is canonical: fixed key order (op, topic, msg, id), compact
separators, no NaN/Infinity.  Faults are reported back to the offending
client as {"op": "error", "reason": ..., "id": ...} without closing the
connection.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass

OPS = ("advertise", "publish", "subscribe", "unsubscribe")

MAX_PAYLOAD_BYTES = 1 << 20          # serialized msg limit
MAX_TOPIC_BYTES = 256
MAX_WIRE_BYTES = MAX_PAYLOAD_BYTES + 4096   # whole-line guard for servers

_TOPIC_RE = re.compile(r"^(/[a-z0-9_]+)+$")


class ProtocolError(ValueError):
    """Base for everything that can go wrong on the wire."""


class MalformedTopic(ProtocolError):
    pass


class MalformedJson(ProtocolError):
    pass


class UnknownOp(ProtocolError):
    pass


class MissingMsg(ProtocolError):
    pass


class UnexpectedMsg(ProtocolError):
    pass


class PayloadTooLarge(ProtocolError):
    pass


class NonFiniteNumber(ProtocolError):
    pass


def validate_topic(path: str) -> str:
    """Return `path` if it is a well-formed topic name, else raise MalformedTopic.

    Grammar: '/'-prefixed segments of [a-z0-9_]+, no empty segment, no
    trailing slash, at most 256 bytes.
    """
    if not isinstance(path, str):
        raise MalformedTopic(f"topic must be a string, got {type(path).__name__}")
    if len(path.encode("utf-8")) > MAX_TOPIC_BYTES:
        raise MalformedTopic(f"topic longer than {MAX_TOPIC_BYTES} bytes")
    if not _TOPIC_RE.match(path):
        raise MalformedTopic(f"bad topic {path!r}")
    return path


@dataclass
class Envelope:
    """One bus message: op + topic, msg present iff op == 'publish'."""

    op: str
    topic: str
    msg: object = None
    id: str | None = None

    def validate(self) -> "Envelope":
        if self.op not in OPS:
            raise UnknownOp(f"unknown op {self.op!r}")
        validate_topic(self.topic)
        if self.op == "publish":
            if self.msg is _ABSENT:
                raise MissingMsg("publish envelope has no msg")
        elif self.msg is not _ABSENT and self.msg is not None:
            raise UnexpectedMsg(f"op {self.op!r} must not carry msg")
        if self.id is not None and not isinstance(self.id, str):
            raise ProtocolError("id must be a string")
        return self


# Sentinel distinguishing "msg key absent" from "msg is JSON null".  A
# publish of null is legal; a publish without msg is not.
class _Absent:
    def __repr__(self):
        return "<absent>"


_ABSENT = _Absent()


def _check_finite(value) -> None:
    if isinstance(value, bool):
        return
    if isinstance(value, float) and not math.isfinite(value):
        raise NonFiniteNumber("payload numbers must be finite")
    if isinstance(value, dict):
        for v in value.values():
            _check_finite(v)
    elif isinstance(value, (list, tuple)):
        for v in value:
            _check_finite(v)


def encode_payload(msg) -> str:
    """Serialize a payload, enforcing finiteness and the 1 MiB cap."""
    _check_finite(msg)
    try:
        text = json.dumps(msg, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"payload not JSON-serializable: {exc}") from exc
    if len(text.encode("utf-8")) > MAX_PAYLOAD_BYTES:
        raise PayloadTooLarge(f"payload exceeds {MAX_PAYLOAD_BYTES} bytes")
    return text


def encode_envelope(env: Envelope) -> bytes:
    """Encode one envelope as a single '\\n'-terminated JSON line."""
    env.validate()
    parts = [f'"op":{json.dumps(env.op)}', f'"topic":{json.dumps(env.topic)}']
    if env.op == "publish":
        parts.append(f'"msg":{encode_payload(env.msg)}')
    if env.id is not None:
        parts.append(f'"id":{json.dumps(env.id, ensure_ascii=False)}')
    return ("{" + ",".join(parts) + "}\n").encode("utf-8")


def encode_error(reason: str, id: str | None = None) -> bytes:
    """Encode the error envelope sent back to a misbehaving client."""
    obj = {"op": "error", "reason": reason}
    if id is not None:
        obj["id"] = id
    return (json.dumps(obj, separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")


def _reject_constant(name: str):
    raise MalformedJson(f"non-finite number {name} on the wire")


def decode_envelope(line: bytes | str) -> Envelope:
    """Parse one wire line back into an Envelope (inverse of encode_envelope).

    Raises MalformedJson, UnknownOp, MalformedTopic, MissingMsg,
    UnexpectedMsg or PayloadTooLarge.
    """
    if isinstance(line, bytes):
        if len(line) > MAX_WIRE_BYTES:
            raise PayloadTooLarge(f"wire line exceeds {MAX_WIRE_BYTES} bytes")
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"not UTF-8: {exc}") from exc
    try:
        obj = json.loads(line, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"bad JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedJson("envelope must be a JSON object")

    unknown = set(obj) - {"op", "topic", "msg", "id"}
    if unknown:
        raise MalformedJson(f"unknown envelope keys {sorted(unknown)}")
    if "op" not in obj:
        raise UnknownOp("envelope has no op")
    if "topic" not in obj:
        raise MalformedTopic("envelope has no topic")

    env = Envelope(
        op=obj["op"],
        topic=obj["topic"],
        msg=obj["msg"] if "msg" in obj else _ABSENT,
        id=obj.get("id"),
    )
    if env.op in OPS and env.op != "publish" and "msg" in obj:
        raise UnexpectedMsg(f"op {env.op!r} must not carry msg")
    env.validate()
    if env.op == "publish":
        encode_payload(env.msg)  # enforce size + finiteness symmetrically
    else:
        env.msg = None
    return env


def decode_server_message(line: bytes | str) -> Envelope | dict:
    """Client-side decode: regular envelopes pass through, error envelopes
    come back as the raw {'op': 'error', ...} dict."""
    if isinstance(line, bytes):
        peek = line
    else:
        peek = line.encode("utf-8")
    if b'"error"' in peek:
        try:
            obj = json.loads(peek)
            if isinstance(obj, dict) and obj.get("op") == "error":
                return obj
        except json.JSONDecodeError:
            pass
    return decode_envelope(line)
