"""Topic bus: JSON envelope protocol, in-process broker, TCP/WebSocket endpoints."""

from .broker import Broker, BrokerShutdown, Subscription
from .client import BusUnavailable, TcpBusClient
from .envelope import (
    MAX_PAYLOAD_BYTES,
    Envelope,
    MalformedJson,
    MalformedTopic,
    MissingMsg,
    NonFiniteNumber,
    PayloadTooLarge,
    ProtocolError,
    UnexpectedMsg,
    UnknownOp,
    decode_envelope,
    decode_server_message,
    encode_envelope,
    encode_error,
    validate_topic,
)
from .server import BindFailure, BusServer

__all__ = [
    "Broker",
    "BrokerShutdown",
    "Subscription",
    "TcpBusClient",
    "BusUnavailable",
    "Envelope",
    "encode_envelope",
    "decode_envelope",
    "decode_server_message",
    "encode_error",
    "validate_topic",
    "ProtocolError",
    "MalformedTopic",
    "MalformedJson",
    "UnknownOp",
    "MissingMsg",
    "UnexpectedMsg",
    "PayloadTooLarge",
    "NonFiniteNumber",
    "MAX_PAYLOAD_BYTES",
    "BusServer",
    "BindFailure",
]
