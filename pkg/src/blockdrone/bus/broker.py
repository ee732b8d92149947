"""In-process topic broker.

Thread-safe publish/subscribe with per-subscriber bounded queues.  A slow
subscriber never stalls a publisher: when its queue is full the oldest
message is dropped and a counter incremented (at-most-once delivery).
There is no replay and no latching; a subscriber only sees messages
published after its subscription took effect.
"""

from __future__ import annotations

import itertools
import threading
from collections import deque

from .envelope import validate_topic

DEFAULT_QUEUE_SIZE = 1024


class BrokerShutdown(RuntimeError):
    """Raised by blocking reads once the broker has been closed."""


class Subscription:
    """One subscriber's message stream for a single topic.

    Iterating yields payloads in publish order and ends cleanly when the
    subscription or the broker is closed.  Each stream is meant to be
    consumed by exactly one consumer.
    """

    def __init__(self, topic: str, sub_id: int, maxsize: int = DEFAULT_QUEUE_SIZE):
        self.topic = topic
        self.id = sub_id
        self.dropped = 0
        self._queue: deque = deque()
        self._maxsize = maxsize
        self._cond = threading.Condition()
        self._closed = False

    def _push(self, msg) -> None:
        with self._cond:
            if self._closed:
                return
            if len(self._queue) >= self._maxsize:
                self._queue.popleft()
                self.dropped += 1
            self._queue.append(msg)
            self._cond.notify()

    def get(self, timeout: float | None = None):
        """Pop the next payload, blocking up to `timeout` seconds.

        Raises TimeoutError on timeout and BrokerShutdown once closed and
        drained.
        """
        with self._cond:
            if not self._cond.wait_for(lambda: self._queue or self._closed, timeout):
                raise TimeoutError(f"no message on {self.topic} within {timeout}s")
            if self._queue:
                return self._queue.popleft()
            raise BrokerShutdown(f"subscription to {self.topic} closed")

    def get_nowait(self):
        with self._cond:
            if self._queue:
                return self._queue.popleft()
            if self._closed:
                raise BrokerShutdown(f"subscription to {self.topic} closed")
            raise TimeoutError(f"no message queued on {self.topic}")

    def drain(self) -> list:
        """Pop everything currently queued without blocking."""
        with self._cond:
            out = list(self._queue)
            self._queue.clear()
            return out

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed

    def __iter__(self):
        while True:
            try:
                yield self.get()
            except BrokerShutdown:
                return


class Broker:
    """Topic-based publish/subscribe hub shared by all transports."""

    def __init__(self, queue_size: int = DEFAULT_QUEUE_SIZE):
        self._lock = threading.Lock()
        self._subs: dict[str, list[Subscription]] = {}
        self._advertised: set[str] = set()
        self._queue_size = queue_size
        self._ids = itertools.count(1)
        self._closed = False

    def advertise(self, topic: str) -> None:
        """Record a topic announcement.  Publishing without it stays legal."""
        topic = validate_topic(topic)
        with self._lock:
            self._advertised.add(topic)

    def advertised(self) -> set[str]:
        with self._lock:
            return set(self._advertised)

    def subscribe(self, topic: str, queue_size: int | None = None) -> Subscription:
        topic = validate_topic(topic)
        with self._lock:
            if self._closed:
                raise BrokerShutdown("broker is closed")
            sub = Subscription(topic, next(self._ids), queue_size or self._queue_size)
            self._subs.setdefault(topic, []).append(sub)
            return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            subs = self._subs.get(sub.topic, [])
            if sub in subs:
                subs.remove(sub)
        sub.close()

    def publish(self, topic: str, msg) -> int:
        """Deliver `msg` to every current subscriber of `topic`.

        Returns the number of subscribers reached; zero subscribers is not
        an error (fire-and-forget).
        """
        topic = validate_topic(topic)
        with self._lock:
            if self._closed:
                raise BrokerShutdown("broker is closed")
            targets = list(self._subs.get(topic, ()))
            # Enqueue under the broker lock so concurrent publishers keep a
            # single per-topic order at every subscriber.
            for sub in targets:
                sub._push(msg)
        return len(targets)

    def subscriber_count(self, topic: str) -> int:
        with self._lock:
            return len(self._subs.get(topic, ()))

    def close(self) -> None:
        """Shut down: all subscriber streams terminate after draining."""
        with self._lock:
            self._closed = True
            subs = [s for lst in self._subs.values() for s in lst]
            self._subs.clear()
        for sub in subs:
            sub.close()

    @property
    def closed(self) -> bool:
        return self._closed
