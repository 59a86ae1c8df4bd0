"""
Envelope: the pub/sub wire unit, carried inside an overlay datagram.

Layout (big-endian):
    magic "FOG2" | version u8 | kind u8 | topic_len u16 | topic
    | message_id u64 | seq u64 | publish_instant_us u64
    | frag_index u16 | frag_count u16 | payload_len u32 | payload
"""
import struct
from dataclasses import dataclass

from constants import ENVELOPE_MAGIC, ENVELOPE_VERSION, MAX_TOPIC_BYTES
from errors import MalformedEnvelope, TopicTooLong

__all__ = ["Envelope", "KIND_DATA", "KIND_BEACON", "KIND_ACK", "envelope_overhead",
           "check_topic", "make_message_id", "publisher_of"]

KIND_DATA = 0
KIND_BEACON = 1
KIND_ACK = 2
_KINDS = (KIND_DATA, KIND_BEACON, KIND_ACK)

_HEAD = struct.Struct(">4sBBH")
_BODY = struct.Struct(">QQQHHI")


def check_topic(topic: str) -> bytes:
    if not topic:
        raise TopicTooLong("topic name must not be empty")
    raw = topic.encode("utf-8")
    if len(raw) > MAX_TOPIC_BYTES:
        raise TopicTooLong(f"topic is {len(raw)} bytes, limit is {MAX_TOPIC_BYTES}")
    return raw


def envelope_overhead(topic: str) -> int:
    return _HEAD.size + len(topic.encode("utf-8")) + _BODY.size


def make_message_id(publisher_id: int, seq: int) -> int:
    return (publisher_id & 0xFFFFFFFF) << 32 | (seq & 0xFFFFFFFF)


def publisher_of(message_id: int) -> int:
    return message_id >> 32


@dataclass(frozen=True)
class Envelope:
    topic: str
    seq: int
    publish_instant: float
    message_id: int
    frag_index: int = 0
    frag_count: int = 1
    payload: bytes = b""
    kind: int = KIND_DATA

    def encode(self) -> bytes:
        raw_topic = check_topic(self.topic)
        if not 0 <= self.frag_index < self.frag_count:
            raise MalformedEnvelope(f"fragment {self.frag_index} of {self.frag_count}")
        return b"".join((
            _HEAD.pack(ENVELOPE_MAGIC, ENVELOPE_VERSION, self.kind, len(raw_topic)),
            raw_topic,
            _BODY.pack(self.message_id, self.seq, max(0, round(self.publish_instant * 1e6)),
                       self.frag_index, self.frag_count, len(self.payload)),
            self.payload,
        ))

    @classmethod
    def decode(cls, data: bytes) -> "Envelope":
        if len(data) < _HEAD.size:
            raise MalformedEnvelope("truncated header")
        magic, version, kind, topic_len = _HEAD.unpack_from(data, 0)
        if magic != ENVELOPE_MAGIC:
            raise MalformedEnvelope("bad magic")
        if version != ENVELOPE_VERSION:
            raise MalformedEnvelope(f"unsupported version {version}")
        if kind not in _KINDS:
            raise MalformedEnvelope(f"unknown kind {kind}")
        offset = _HEAD.size
        if len(data) < offset + topic_len + _BODY.size:
            raise MalformedEnvelope("truncated topic or body")
        try:
            topic = bytes(data[offset:offset + topic_len]).decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedEnvelope("topic is not UTF-8") from None
        offset += topic_len
        message_id, seq, instant_us, frag_index, frag_count, length = _BODY.unpack_from(data, offset)
        offset += _BODY.size
        if len(data) - offset != length:
            raise MalformedEnvelope(f"payload length {length} does not match {len(data) - offset}")
        if frag_index >= frag_count:
            raise MalformedEnvelope(f"fragment {frag_index} of {frag_count}")
        return cls(topic=topic, seq=seq, publish_instant=instant_us / 1e6, message_id=message_id,
                   frag_index=frag_index, frag_count=frag_count,
                   payload=bytes(data[offset:]), kind=kind)
