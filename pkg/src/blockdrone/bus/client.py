"""TCP client for the bus.

Exposes the same publish/subscribe surface as the in-process Broker so
mission runs can target either transparently.
"""

from __future__ import annotations

import socket
import threading

from .broker import Subscription
from .envelope import Envelope, decode_server_message, encode_envelope


class BusUnavailable(ConnectionError):
    """The bus endpoint cannot be reached or the connection died."""


class TcpBusClient:
    """Line-oriented bus client over one TCP connection.

    Subscriptions are served by a reader thread that routes incoming
    publish envelopes to per-topic queues; error envelopes land on
    `errors`.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 9090, timeout: float = 5.0):
        self.host = host
        self.port = port
        self.errors: list[dict] = []
        self._subs: dict[str, Subscription] = {}
        self._lock = threading.Lock()
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BusUnavailable(f"cannot reach bus at {host}:{port}: {exc}") from exc
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _send(self, env: Envelope) -> None:
        data = encode_envelope(env)
        with self._lock:
            if self._closed:
                raise BusUnavailable("client closed")
            try:
                self._sock.sendall(data)
            except OSError as exc:
                self._closed = True
                raise BusUnavailable(f"bus connection lost: {exc}") from exc

    def publish(self, topic: str, msg, id: str | None = None) -> None:
        self._send(Envelope("publish", topic, msg, id))

    def advertise(self, topic: str) -> None:
        self._send(Envelope("advertise", topic))

    def subscribe(self, topic: str) -> Subscription:
        with self._lock:
            if topic in self._subs:
                return self._subs[topic]
            sub = Subscription(topic, sub_id=len(self._subs) + 1)
            self._subs[topic] = sub
        self._send(Envelope("subscribe", topic))
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            self._subs.pop(sub.topic, None)
        sub.close()
        self._send(Envelope("unsubscribe", sub.topic))

    def _read_loop(self) -> None:
        buf = b""
        try:
            while True:
                chunk = self._sock.recv(65536)
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    self._dispatch(line)
        except OSError:
            pass
        finally:
            self._shutdown_subs()

    def _dispatch(self, line: bytes) -> None:
        try:
            msg = decode_server_message(line)
        except Exception:
            return
        if isinstance(msg, dict):
            self.errors.append(msg)
            return
        if msg.op == "publish":
            with self._lock:
                sub = self._subs.get(msg.topic)
            if sub is not None:
                sub._push(msg.msg)

    def _shutdown_subs(self) -> None:
        with self._lock:
            subs = list(self._subs.values())
            self._subs.clear()
        for sub in subs:
            sub.close()

    def close(self) -> None:
        with self._lock:
            self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._shutdown_subs()

    def __enter__(self) -> "TcpBusClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
