"""
Static peer table: which overlay peers subscribe to which topics.
Entries exist only for peers with an established tunnel session; beacons refresh them.
"""
import threading
from dataclasses import dataclass, field
from typing import Optional

from constants import ANNOUNCE_INTERVAL_S, STALE_AFTER_INTERVALS

__all__ = ["PeerEntry", "PeerTable", "topic_matches"]


def topic_matches(pattern: str, topic: str) -> bool:
    """Exact match, or prefix match for patterns ending in `*`."""
    if pattern.endswith("*"):
        return topic.startswith(pattern[:-1])
    return pattern == topic


@dataclass
class PeerEntry:
    public_key: bytes
    machine: str = ""
    nodes: list[str] = field(default_factory=list)
    topics: dict[str, str] = field(default_factory=dict)
    refreshed_at: float = 0.0
    announced: bool = False


class PeerTable:
    def __init__(self, interval: float = ANNOUNCE_INTERVAL_S,
                 stale_after: int = STALE_AFTER_INTERVALS):
        self.interval = interval
        self.stale_after = stale_after
        self._entries: dict[bytes, PeerEntry] = {}
        self._lock = threading.Lock()

    def register(self, public_key: bytes, now: float, machine: str = "") -> PeerEntry:
        with self._lock:
            entry = self._entries.get(public_key)
            if entry is None:
                entry = self._entries[public_key] = PeerEntry(public_key, machine, refreshed_at=now)
            else:
                entry.refreshed_at = now
            return entry

    def remove(self, public_key: bytes) -> None:
        with self._lock:
            self._entries.pop(public_key, None)

    def update(self, public_key: bytes, beacon: dict, now: float) -> bool:
        """Apply a beacon. False when the sender has no session-backed entry."""
        with self._lock:
            entry = self._entries.get(public_key)
            if entry is None:
                return False
            entry.machine = beacon.get("machine", entry.machine)
            entry.nodes = list(beacon.get("nodes", []))
            entry.topics = dict(beacon.get("topics", {}))
            entry.refreshed_at = now
            entry.announced = True
            return True

    def is_stale(self, public_key: bytes, now: float) -> bool:
        with self._lock:
            entry = self._entries.get(public_key)
            return entry is None or self._stale(entry, now)

    def _stale(self, entry: PeerEntry, now: float) -> bool:
        return now - entry.refreshed_at >= self.stale_after * self.interval

    def subscribers(self, topic: str, now: float) -> dict[bytes, str]:
        """Fresh peers subscribed to `topic`, with their delivery mode."""
        with self._lock:
            return {pk: e.topics[topic] for pk, e in self._entries.items()
                    if topic in e.topics and not self._stale(e, now)}

    def get(self, public_key: bytes) -> Optional[PeerEntry]:
        with self._lock:
            return self._entries.get(public_key)

    def machine_of(self, public_key: bytes) -> str:
        entry = self.get(public_key)
        return entry.machine if entry else ""

    def remote_topics(self, now: float) -> set[str]:
        with self._lock:
            return {t for e in self._entries.values() if not self._stale(e, now) for t in e.topics}

    def snapshot(self, now: float) -> dict[str, dict]:
        with self._lock:
            return {
                (e.machine or e.public_key.hex()[:8]): {
                    "topics": sorted(e.topics),
                    "nodes": list(e.nodes),
                    "age_s": round(now - e.refreshed_at, 3),
                    "stale": self._stale(e, now),
                }
                for e in self._entries.values()
            }

    def __len__(self) -> int:
        return len(self._entries)
