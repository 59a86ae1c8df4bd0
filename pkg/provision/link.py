"""
Emulated network links (bandwidth, one-way delay, loss).
Shaping is applied at the overlay send point; delivery times are computed, not slept.
"""
import random
import threading
from dataclasses import dataclass
from typing import Optional

from constants import LINK_BANDWIDTH_BPS, LINK_DELAY_MS

__all__ = ["LinkModel", "Link", "emulated_send"]


@dataclass(frozen=True)
class LinkModel:
    bandwidth_bps: float = LINK_BANDWIDTH_BPS
    propagation_delay_ms: float = LINK_DELAY_MS
    loss_rate: float = 0.0

    def __post_init__(self):
        if not self.bandwidth_bps > 0:
            raise ValueError("bandwidth must be > 0")
        if not 0.0 <= self.loss_rate < 1.0:
            raise ValueError("loss_rate must be in [0, 1)")
        if self.propagation_delay_ms < 0:
            raise ValueError("propagation delay must be >= 0")

    @property
    def delay_s(self) -> float:
        return self.propagation_delay_ms / 1000.0

    def serialization_s(self, payload_bits: float) -> float:
        return payload_bits / self.bandwidth_bps

    def to_dict(self) -> dict:
        return {"bandwidth_bps": self.bandwidth_bps,
                "propagation_delay_ms": self.propagation_delay_ms,
                "loss_rate": self.loss_rate}


def emulated_send(link: LinkModel, payload_bits: float, now: float,
                  rng: Optional[random.Random] = None) -> Optional[float]:
    """
    Delivery instant of a single transmission on an idle link, or None if dropped.

    Args:
        rng: seeded source for the loss draw; only consulted when loss_rate > 0
    """
    if payload_bits <= 0:
        raise ValueError("payload_bits must be > 0")
    if link.loss_rate > 0:
        if (rng or random).random() < link.loss_rate:
            return None
    return now + link.delay_s + link.serialization_s(payload_bits)


class Link:
    """
    One direction of a shaped link. Transmissions serialize one after another,
    so a burst queues behind the datagram currently on the wire.
    """

    def __init__(self, model: LinkModel, seed: int = 0):
        self.model = model
        self.rng = random.Random(seed)
        self.busy_until = 0.0
        self.bytes_sent = 0
        self.datagrams_sent = 0
        self.dropped = 0
        self._lock = threading.Lock()

    def transmit(self, nbytes: int, now: float) -> Optional[float]:
        """Queue `nbytes` at `now`; returns the delivery instant or None if lost."""
        with self._lock:
            start = max(now, self.busy_until)
            done = start + self.model.serialization_s(nbytes * 8)
            self.busy_until = done
            self.bytes_sent += nbytes
            self.datagrams_sent += 1
            if self.model.loss_rate > 0 and self.rng.random() < self.model.loss_rate:
                self.dropped += 1
                return None
            return done + self.model.delay_s

    def idle_at(self, now: float) -> bool:
        with self._lock:
            return self.busy_until <= now

    def backlog_s(self, now: float) -> float:
        with self._lock:
            return max(0.0, self.busy_until - now)
