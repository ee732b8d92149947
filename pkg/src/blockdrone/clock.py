"""Pluggable clocks: virtual for deterministic runs, wall for live ones."""

from __future__ import annotations

import time


class VirtualClock:
    """Clock that only moves when slept.  sleep(s) advances now() by exactly s."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def sleep(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("cannot sleep a negative duration")
        self._now += seconds


class WallClock:
    """Monotonic wall-time clock, zeroed at construction."""

    def __init__(self):
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)
