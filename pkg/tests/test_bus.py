"""Envelope protocol and in-process broker behavior."""

import json
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockdrone.bus import (
    Broker,
    BrokerShutdown,
    Envelope,
    MalformedJson,
    MalformedTopic,
    MissingMsg,
    NonFiniteNumber,
    PayloadTooLarge,
    UnexpectedMsg,
    UnknownOp,
    decode_envelope,
    encode_envelope,
    validate_topic,
)

# ---------------------------------------------------------------- topics


def test_paper_topic_is_valid():
    assert validate_topic("/scratch_example/takeoff") == "/scratch_example/takeoff"


@pytest.mark.parametrize(
    "bad",
    ["/", "scratch/cmd", "/UPPER", "/a//b", "/a/", "", "/a b", "/-x", "/" + "a" * 300],
)
def test_malformed_topics_rejected(bad):
    with pytest.raises(MalformedTopic):
        validate_topic(bad)


# ---------------------------------------------------------------- encode / decode


def test_encode_publish_matches_wire_form():
    env = Envelope("publish", "/scratch_example/land", {})
    assert encode_envelope(env) == b'{"op":"publish","topic":"/scratch_example/land","msg":{}}\n'


def test_encode_subscribe_has_no_msg_key():
    line = encode_envelope(Envelope("subscribe", "/tello/odom"))
    assert b'"msg"' not in line
    assert line.endswith(b"\n")
    assert b"\n" not in line[:-1]


def test_oversize_payload_rejected():
    big = "x" * (2 << 20)  # 2 MiB
    with pytest.raises(PayloadTooLarge):
        encode_envelope(Envelope("publish", "/x", big))


def test_unknown_op_rejected():
    with pytest.raises(UnknownOp):
        decode_envelope(b'{"op":"hover","topic":"/x"}')


def test_publish_without_msg_rejected():
    with pytest.raises(MissingMsg):
        decode_envelope(b'{"op":"publish","topic":"/x"}')


def test_msg_on_subscribe_rejected():
    with pytest.raises(UnexpectedMsg):
        decode_envelope(b'{"op":"subscribe","topic":"/x","msg":1}')


def test_garbage_and_non_object_rejected():
    with pytest.raises(MalformedJson):
        decode_envelope(b"{nope")
    with pytest.raises(MalformedJson):
        decode_envelope(b"[1,2]")
    with pytest.raises(MalformedJson):
        decode_envelope(b'{"op":"publish","topic":"/x","msg":NaN}')


def test_nan_payload_rejected_on_encode():
    with pytest.raises(NonFiniteNumber):
        encode_envelope(Envelope("publish", "/x", {"v": float("nan")}))


def test_publish_null_roundtrips():
    env = Envelope("publish", "/x", None)
    assert decode_envelope(encode_envelope(env)) == env


json_values = st.recursive(
    st.none()
    | st.booleans()
    | st.integers(min_value=-(2**53), max_value=2**53)
    | st.floats(allow_nan=False, allow_infinity=False, width=64)
    | st.text(max_size=20),
    lambda children: st.lists(children, max_size=4)
    | st.dictionaries(st.text(max_size=8), children, max_size=4),
    max_leaves=12,
)

topics = st.lists(
    st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_", min_size=1, max_size=8),
    min_size=1,
    max_size=4,
).map(lambda segs: "/" + "/".join(segs))


@st.composite
def envelopes(draw):
    op = draw(st.sampled_from(["advertise", "publish", "subscribe", "unsubscribe"]))
    msg = draw(json_values) if op == "publish" else None
    corr = draw(st.none() | st.text(max_size=12))
    return Envelope(op, draw(topics), msg, corr)


@given(envelopes())
@settings(max_examples=300, deadline=None)
def test_roundtrip_property(env):
    assert decode_envelope(encode_envelope(env)) == env


@given(envelopes())
@settings(max_examples=100, deadline=None)
def test_encoded_line_is_parseable_json(env):
    line = encode_envelope(env)
    obj = json.loads(line)
    assert obj["op"] == env.op and obj["topic"] == env.topic


# ---------------------------------------------------------------- broker


def test_publish_counts_subscribers():
    broker = Broker()
    subs = [broker.subscribe("/a/b") for _ in range(3)]
    assert broker.publish("/a/b", 42) == 3
    for sub in subs:
        assert sub.get(timeout=1) == 42


def test_publish_without_subscribers_is_fine():
    broker = Broker()
    assert broker.publish("/lonely", {"x": 1}) == 0


def test_no_replay_for_late_subscriber():
    broker = Broker()
    broker.publish("/t", "early")
    sub = broker.subscribe("/t")
    broker.publish("/t", "late")
    assert sub.get(timeout=1) == "late"
    with pytest.raises(TimeoutError):
        sub.get_nowait()


def test_unsubscribe_stops_delivery():
    broker = Broker()
    sub = broker.subscribe("/t")
    broker.unsubscribe(sub)
    broker.publish("/t", 1)
    assert list(sub) == []


def test_per_topic_fifo_order():
    broker = Broker()
    sub = broker.subscribe("/seq")
    for i in range(500):
        broker.publish("/seq", i)
    got = [sub.get(timeout=1) for _ in range(500)]
    assert got == list(range(500))


def test_fifo_under_concurrent_publishers():
    # Each publisher's own messages must arrive in its publish order.
    broker = Broker()
    sub = broker.subscribe("/seq", queue_size=10000)

    def pump(tag):
        for i in range(200):
            broker.publish("/seq", {"tag": tag, "i": i})

    threads = [threading.Thread(target=pump, args=(t,)) for t in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    seen = {t: -1 for t in range(4)}
    for _ in range(800):
        msg = sub.get(timeout=1)
        assert msg["i"] == seen[msg["tag"]] + 1
        seen[msg["tag"]] = msg["i"]


def test_slow_subscriber_drops_oldest():
    broker = Broker()
    sub = broker.subscribe("/burst", queue_size=8)
    for i in range(20):
        broker.publish("/burst", i)
    assert sub.dropped == 12
    got = list(sub.drain())
    assert got == list(range(12, 20))


def test_shutdown_terminates_streams():
    broker = Broker()
    sub = broker.subscribe("/t")
    broker.publish("/t", "last")
    broker.close()
    # queued message still drains, then the stream ends cleanly
    assert list(sub) == ["last"]
    with pytest.raises(BrokerShutdown):
        sub.get(timeout=0.1)
    with pytest.raises(BrokerShutdown):
        broker.subscribe("/t")


def test_advertise_recorded_but_not_required():
    broker = Broker()
    broker.advertise("/announced")
    assert "/announced" in broker.advertised()
    assert broker.publish("/never_announced", 1) == 0
