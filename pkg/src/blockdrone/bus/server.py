"""Network endpoints for the broker.

Two transports speak the identical envelope protocol:

  * TCP  — '\\n'-delimited JSON lines (default 127.0.0.1:9090)
  * WebSocket — one envelope per text frame, path "/bridge"
    (default 127.0.0.1:9091)

A malformed envelope from a client is answered with
{"op":"error","reason":...} on that connection only; other clients and
ongoing deliveries are never disturbed.
"""

from __future__ import annotations

import http
import json
import logging
import socket
import threading

from websockets.sync.server import serve as ws_serve

from .broker import Broker, Subscription
from .envelope import (
    MAX_WIRE_BYTES,
    Envelope,
    ProtocolError,
    decode_envelope,
    encode_envelope,
    encode_error,
)

logger = logging.getLogger(__name__)


class BindFailure(OSError):
    """A server endpoint could not bind its address."""


def _error_id(raw) -> str | None:
    """Best-effort extraction of the correlation id from a bad line."""
    try:
        obj = json.loads(raw)
        if isinstance(obj, dict) and isinstance(obj.get("id"), str):
            return obj["id"]
    except (ValueError, TypeError):
        pass
    return None


class _Session:
    """Per-connection protocol state, shared by both transports.

    `send` must accept one encoded envelope line (bytes, '\\n'-terminated);
    the transport decides how to frame it.  Sends are serialized here so
    subscription pumps never interleave partial messages.
    """

    def __init__(self, broker: Broker, send):
        self._broker = broker
        self._send_raw = send
        self._send_lock = threading.Lock()
        self._subs: dict[str, Subscription] = {}
        self._pumps: list[threading.Thread] = []
        self._closed = False

    def _send(self, line: bytes) -> None:
        with self._send_lock:
            if self._closed:
                return
            try:
                self._send_raw(line)
            except OSError:
                self._closed = True

    def handle_line(self, raw: bytes | str) -> None:
        try:
            env = decode_envelope(raw)
        except ProtocolError as exc:
            self._send(encode_error(f"{type(exc).__name__}: {exc}", _error_id(raw)))
            return
        if env.op == "advertise":
            self._broker.advertise(env.topic)
        elif env.op == "publish":
            self._broker.publish(env.topic, env.msg)
        elif env.op == "subscribe":
            self._subscribe(env.topic)
        elif env.op == "unsubscribe":
            sub = self._subs.pop(env.topic, None)
            if sub is not None:
                self._broker.unsubscribe(sub)

    def _subscribe(self, topic: str) -> None:
        if topic in self._subs:
            return  # duplicate subscribe is a no-op
        sub = self._broker.subscribe(topic)
        self._subs[topic] = sub
        pump = threading.Thread(target=self._pump, args=(sub,), daemon=True)
        self._pumps.append(pump)
        pump.start()

    def _pump(self, sub: Subscription) -> None:
        for msg in sub:
            self._send(encode_envelope(Envelope("publish", sub.topic, msg)))

    def close(self) -> None:
        self._closed = True
        for sub in self._subs.values():
            self._broker.unsubscribe(sub)
        self._subs.clear()


class _TcpEndpoint:
    def __init__(self, broker: Broker, host: str, port: int):
        self._broker = broker
        self.host = host
        self.port = port
        self._sock: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._stopping = threading.Event()
        self._sessions: list[_Session] = []
        self._conns: set[socket.socket] = set()

    def start(self) -> None:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((self.host, self.port))
        except OSError as exc:
            sock.close()
            raise BindFailure(f"cannot bind tcp {self.host}:{self.port}: {exc}") from exc
        sock.listen()
        self.port = sock.getsockname()[1]
        self._sock = sock
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        assert self._sock is not None
        while not self._stopping.is_set():
            try:
                conn, _addr = self._sock.accept()
            except OSError:
                return  # listener closed
            threading.Thread(target=self._serve_conn, args=(conn,), daemon=True).start()

    def _serve_conn(self, conn: socket.socket) -> None:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        session = _Session(self._broker, conn.sendall)
        self._sessions.append(session)
        self._conns.add(conn)
        buf = b""
        try:
            while True:
                chunk = conn.recv(65536)
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    session.handle_line(line)
                if len(buf) > MAX_WIRE_BYTES:
                    session._send(encode_error("PayloadTooLarge: wire line too long"))
                    buf = b""  # resync at the next newline
        except OSError:
            pass
        finally:
            session.close()
            self._conns.discard(conn)
            try:
                conn.close()
            except OSError:
                pass

    def stop(self) -> None:
        self._stopping.set()
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        for session in self._sessions:
            session.close()
        for conn in list(self._conns):
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                conn.close()
            except OSError:
                pass


class _WsEndpoint:
    def __init__(self, broker: Broker, host: str, port: int, path: str = "/bridge"):
        self._broker = broker
        self.host = host
        self.port = port
        self.path = path
        self._server = None
        self._thread: threading.Thread | None = None
        self._conns: set = set()

    def start(self) -> None:
        def handler(conn):
            # one envelope per text frame; strip the line terminator
            session = _Session(
                self._broker,
                lambda line: conn.send(line.rstrip(b"\n").decode("utf-8")),
            )
            self._conns.add(conn)
            try:
                for message in conn:
                    session.handle_line(message)
            except Exception:
                pass
            finally:
                session.close()
                self._conns.discard(conn)

        def route(conn, request):
            if request.path != self.path:
                return conn.respond(http.HTTPStatus.NOT_FOUND, "unknown path\n")
            return None

        try:
            self._server = ws_serve(
                handler,
                self.host,
                self.port,
                process_request=route,
                max_size=MAX_WIRE_BYTES,
                close_timeout=1,
            )
        except OSError as exc:
            raise BindFailure(f"cannot bind ws {self.host}:{self.port}: {exc}") from exc
        self.port = self._server.socket.getsockname()[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
        for conn in list(self._conns):
            try:
                conn.close()
            except Exception:
                pass


class BusServer:
    """Runs one broker behind a TCP and a WebSocket endpoint.

    Pass port 0 to bind an ephemeral port; the bound port is readable from
    `tcp_port` / `ws_port` after start().
    """

    def __init__(
        self,
        broker: Broker | None = None,
        tcp_host: str = "127.0.0.1",
        tcp_port: int = 9090,
        ws_host: str = "127.0.0.1",
        ws_port: int = 9091,
        ws_path: str = "/bridge",
    ):
        self.broker = broker if broker is not None else Broker()
        self._tcp = _TcpEndpoint(self.broker, tcp_host, tcp_port)
        self._ws = _WsEndpoint(self.broker, ws_host, ws_port, ws_path)

    def start(self) -> "BusServer":
        self._tcp.start()
        try:
            self._ws.start()
        except BindFailure:
            self._tcp.stop()
            raise
        logger.info(
            "bus serving tcp=%s:%d ws=%s:%d%s",
            self._tcp.host, self._tcp.port, self._ws.host, self._ws.port, self._ws.path,
        )
        return self

    @property
    def tcp_port(self) -> int:
        return self._tcp.port

    @property
    def ws_port(self) -> int:
        return self._ws.port

    @property
    def ws_path(self) -> str:
        return self._ws.path

    def stop(self) -> None:
        self._ws.stop()
        self._tcp.stop()
        self.broker.close()

    def __enter__(self) -> "BusServer":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
