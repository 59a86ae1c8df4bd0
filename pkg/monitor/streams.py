"""
Per-client frame streams with a per-topic rate cap.

Pub/sub callbacks only ever replace the pending frame of a topic (newest wins), so they never
wait on a client. The client's send loop takes whatever is due.
"""
import threading
from collections import Counter
from typing import Callable, Optional

from constants import BRIDGE_QUEUE_DEPTH, BRIDGE_RATE_CAP_HZ

from .frames import BridgeFrame

__all__ = ["ClientStream"]


class ClientStream:
    """
    Usage:
        stream = ClientStream(rate_cap_hz=10.0)
        stream.offer(frame)                 # from any thread
        for frame in stream.take_due(now):  # from the client's send loop
            ...
    """

    def __init__(self, rate_cap_hz: float = BRIDGE_RATE_CAP_HZ, depth: int = BRIDGE_QUEUE_DEPTH,
                 wake: Optional[Callable[[], None]] = None):
        if rate_cap_hz <= 0:
            raise ValueError("rate cap must be > 0")
        self.period = 1.0 / rate_cap_hz
        self.depth = depth
        self.wake = wake
        self.stats: Counter = Counter()
        self._pending: dict[str, BridgeFrame] = {}
        self._last_sent: dict[str, float] = {}
        self._last_seq: dict[str, int] = {}
        self._lock = threading.Lock()

    def offer(self, frame: BridgeFrame) -> None:
        with self._lock:
            if frame.seq <= self._last_seq.get(frame.topic, 0):
                self.stats["stale"] += 1
                return
            current = self._pending.get(frame.topic)
            if current is not None:
                if frame.seq <= current.seq:
                    self.stats["stale"] += 1
                    return
                self.stats["dropped"] += 1
            elif len(self._pending) >= self.depth:
                oldest = min(self._pending.values(), key=lambda f: f.publish_instant)
                del self._pending[oldest.topic]
                self.stats["evicted"] += 1
            self._pending[frame.topic] = frame
            self.stats["offered"] += 1
        if self.wake is not None:
            self.wake()

    def take_due(self, now: float) -> list[BridgeFrame]:
        out = []
        with self._lock:
            for topic, frame in list(self._pending.items()):
                if now - self._last_sent.get(topic, float("-inf")) < self.period:
                    continue
                del self._pending[topic]
                self._last_sent[topic] = now
                self._last_seq[topic] = frame.seq
                out.append(frame)
            self.stats["sent"] += len(out)
        return sorted(out, key=lambda f: (f.publish_instant, f.topic))

    def next_due(self, now: float) -> Optional[float]:
        """Seconds until the next pending frame may go out (None when nothing is pending)."""
        with self._lock:
            if not self._pending:
                return None
            return max(0.0, min(self._last_sent.get(t, float("-inf")) + self.period
                                for t in self._pending) - now)

    @property
    def pending(self) -> int:
        with self._lock:
            return len(self._pending)
