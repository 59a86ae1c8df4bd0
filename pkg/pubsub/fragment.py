"""Message fragmentation and reassembly."""
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Hashable, Optional

from constants import MAX_DATAGRAM_PAYLOAD, MAX_MESSAGE_BYTES, REASSEMBLY_TIMEOUT_S
from errors import MalformedEnvelope, MessageTooLarge

from .envelope import KIND_DATA, Envelope, envelope_overhead

__all__ = ["fragment", "max_fragment_payload", "Reassembler"]

log = logging.getLogger(__name__)


def max_fragment_payload(topic: str, max_datagram: int = MAX_DATAGRAM_PAYLOAD) -> int:
    room = max_datagram - envelope_overhead(topic)
    if room <= 0:
        raise MessageTooLarge(f"topic {topic!r} leaves no room for payload")
    return room


def fragment(topic: str, payload: bytes, *, seq: int, message_id: int, publish_instant: float,
             max_fragment: Optional[int] = None, kind: int = KIND_DATA) -> list[Envelope]:
    """Split `payload` into envelopes that each fit one overlay datagram."""
    if len(payload) > MAX_MESSAGE_BYTES:
        raise MessageTooLarge(f"{len(payload)} bytes exceeds {MAX_MESSAGE_BYTES}")
    chunk = max_fragment or max_fragment_payload(topic)
    count = max(1, math.ceil(len(payload) / chunk))
    if count > 0xFFFF:
        raise MessageTooLarge(f"{count} fragments exceed the 16-bit fragment counter")
    view = memoryview(payload)
    return [
        Envelope(topic=topic, seq=seq, publish_instant=publish_instant, message_id=message_id,
                 frag_index=i, frag_count=count, payload=bytes(view[i * chunk:(i + 1) * chunk]),
                 kind=kind)
        for i in range(count)
    ]


@dataclass
class _Partial:
    topic: str
    seq: int
    frag_count: int
    last_seen: float
    parts: dict[int, bytes] = field(default_factory=dict)


class Reassembler:
    """
    Collects fragments per (source, message_id). Incomplete messages are dropped after
    `timeout` seconds without a new fragment; `dropped` counts them.
    """

    def __init__(self, timeout: float = REASSEMBLY_TIMEOUT_S):
        self.timeout = timeout
        self._partials: dict[Hashable, _Partial] = {}
        self._lock = threading.Lock()
        self.dropped = 0

    def add(self, source: Hashable, env: Envelope, now: float) -> Optional[bytes]:
        """Returns the full payload once the last fragment arrives."""
        if env.frag_count == 1:
            return env.payload
        key = (source, env.message_id)
        with self._lock:
            partial = self._partials.get(key)
            if partial is None:
                partial = self._partials[key] = _Partial(env.topic, env.seq, env.frag_count, now)
            elif (partial.topic, partial.seq, partial.frag_count) != (env.topic, env.seq, env.frag_count):
                raise MalformedEnvelope("fragment disagrees with earlier fragments of its message")
            partial.last_seen = now
            partial.parts[env.frag_index] = env.payload
            if len(partial.parts) < partial.frag_count:
                return None
            del self._partials[key]
        return b"".join(partial.parts[i] for i in range(partial.frag_count))

    def expire(self, now: float) -> int:
        with self._lock:
            stale = [k for k, p in self._partials.items() if now - p.last_seen >= self.timeout]
            for k in stale:
                del self._partials[k]
            self.dropped += len(stale)
        if stale:
            log.debug("dropped %d incomplete messages", len(stale))
        return len(stale)

    @property
    def pending(self) -> int:
        return len(self._partials)
