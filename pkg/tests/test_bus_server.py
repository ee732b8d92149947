"""TCP and WebSocket endpoints: cross-transport delivery, fault isolation."""

import json
import socket
import time

import pytest
from websockets.sync.client import connect as ws_connect

from blockdrone.bus import BindFailure, BusServer, Envelope, TcpBusClient, encode_envelope


@pytest.fixture()
def server():
    srv = BusServer(tcp_port=0, ws_port=0).start()
    yield srv
    srv.stop()


def _recv_line(sock, deadline=5.0):
    buf = b""
    sock.settimeout(deadline)
    while not buf.endswith(b"\n"):
        chunk = sock.recv(4096)
        if not chunk:
            raise ConnectionError("socket closed")
        buf += chunk
    return buf


def test_tcp_echo_roundtrip(server):
    with TcpBusClient(port=server.tcp_port) as a, TcpBusClient(port=server.tcp_port) as b:
        sub = b.subscribe("/ping")
        time.sleep(0.1)  # let the subscribe land before publishing
        a.publish("/ping", {"n": 1})
        assert sub.get(timeout=2) == {"n": 1}


def test_cross_transport_bytes_identical(server):
    ws_url = f"ws://127.0.0.1:{server.ws_port}/bridge"
    raw_tcp = socket.create_connection(("127.0.0.1", server.tcp_port))
    try:
        with ws_connect(ws_url) as ws:
            ws.send('{"op":"subscribe","topic":"/tello/odom"}')
            raw_tcp.sendall(b'{"op":"subscribe","topic":"/tello/odom"}\n')
            time.sleep(0.15)

            payload = {"t": 1.25, "position": [0.5, -1.0, 2.0], "mode": "flying"}
            with TcpBusClient(port=server.tcp_port) as pub:
                pub.publish("/tello/odom", payload)

            frame = ws.recv(timeout=5)
            line = _recv_line(raw_tcp)
        if isinstance(frame, str):
            frame = frame.encode("utf-8")
        # identical bytes modulo the TCP line terminator
        assert line == frame + b"\n"
        assert json.loads(frame)["msg"] == payload
    finally:
        raw_tcp.close()


def test_malformed_line_gets_error_and_connection_survives(server):
    raw = socket.create_connection(("127.0.0.1", server.tcp_port))
    try:
        raw.sendall(b'{"op":"warp","topic":"/x","id":"req-7"}\n')
        err = json.loads(_recv_line(raw))
        assert err["op"] == "error"
        assert "UnknownOp" in err["reason"]
        assert err["id"] == "req-7"
        # connection still works afterwards
        raw.sendall(b'{"op":"subscribe","topic":"/still/alive"}\n')
        time.sleep(0.1)
        server.broker.publish("/still/alive", "yes")
        msg = json.loads(_recv_line(raw))
        assert msg == {"op": "publish", "topic": "/still/alive", "msg": "yes"}
    finally:
        raw.close()


def test_malformed_client_does_not_disturb_others(server):
    with TcpBusClient(port=server.tcp_port) as good:
        sub = good.subscribe("/data")
        time.sleep(0.1)
        bad = socket.create_connection(("127.0.0.1", server.tcp_port))
        bad.sendall(b"not json at all\n")
        server.broker.publish("/data", 1)
        assert sub.get(timeout=2) == 1
        bad.close()


def test_ws_wrong_path_rejected(server):
    from websockets.exceptions import InvalidStatus

    with pytest.raises(InvalidStatus):
        ws_connect(f"ws://127.0.0.1:{server.ws_port}/nope")


def test_ws_publish_reaches_tcp(server):
    with TcpBusClient(port=server.tcp_port) as tcp:
        sub = tcp.subscribe("/from/ws")
        time.sleep(0.1)
        with ws_connect(f"ws://127.0.0.1:{server.ws_port}/bridge") as ws:
            ws.send(encode_envelope(Envelope("publish", "/from/ws", [1, 2, 3])).decode().rstrip("\n"))
        assert sub.get(timeout=2) == [1, 2, 3]


def test_unsubscribe_over_wire(server):
    with TcpBusClient(port=server.tcp_port) as c:
        sub = c.subscribe("/u")
        time.sleep(0.1)
        server.broker.publish("/u", 1)
        assert sub.get(timeout=2) == 1
        c.unsubscribe(sub)
        time.sleep(0.1)
        server.broker.publish("/u", 2)
        assert server.broker.subscriber_count("/u") == 0


def test_shutdown_ends_client_streams(server):
    client = TcpBusClient(port=server.tcp_port)
    sub = client.subscribe("/t")
    time.sleep(0.1)
    server.stop()
    assert list(sub) == []  # stream ends cleanly
    client.close()


def test_port_collision_raises_bindfailure():
    srv = BusServer(tcp_port=0, ws_port=0).start()
    try:
        with pytest.raises(BindFailure):
            BusServer(tcp_port=srv.tcp_port, ws_port=0).start()
        with pytest.raises(BindFailure):
            BusServer(tcp_port=0, ws_port=srv.ws_port).start()
    finally:
        srv.stop()
