"""
Clocks.
Everything time-dependent takes a Clock so the same code runs against wall time
(agents, CLI) and against a simulated timeline (tests, benchmarks).
"""
import threading
import time
from typing import Protocol

__all__ = ["Clock", "MonotonicClock", "SimulatedClock"]


class Clock(Protocol):
    def now(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...


class MonotonicClock:
    __slots__ = ()

    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class SimulatedClock:
    """
    Manually advanced clock. sleep() advances time instead of blocking.

    Usage:
        clock = SimulatedClock()
        clock.advance(0.5)
        clock.set(2.0)      # never moves backwards
    """

    __slots__ = ("_now", "_lock")

    def __init__(self, start: float = 0.0):
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        self.advance(seconds)

    def advance(self, seconds: float) -> float:
        with self._lock:
            if seconds > 0:
                self._now += seconds
            return self._now

    def set(self, instant: float) -> float:
        with self._lock:
            if instant > self._now:
                self._now = instant
            return self._now
