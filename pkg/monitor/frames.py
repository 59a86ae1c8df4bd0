"""
Bridge frames, the unit a monitoring client receives.

Binary layout (big-endian):

    topic_len u16 | topic bytes | seq u64 | publish_instant u64 (ns) | encoding u8
    | payload_len u32 | payload

Text mode carries the same fields as one JSON object, with bytes payloads base64-encoded.
"""
import base64
import json
import struct
from dataclasses import dataclass

from codec.frame import Frame
from errors import CodecError

__all__ = ["BridgeFrame", "OPAQUE", "FRAME_IMAGE", "TEXT", "ENCODINGS", "classify_payload",
           "keepalive"]

OPAQUE = 0
FRAME_IMAGE = 1
TEXT = 2
ENCODINGS = {OPAQUE: "opaque-bytes", FRAME_IMAGE: "frame-image", TEXT: "text"}

_TOPIC_LEN = struct.Struct(">H")
_BODY = struct.Struct(">QQBI")


def classify_payload(payload: bytes) -> int:
    try:
        Frame.from_bytes(payload)
        return FRAME_IMAGE
    except (CodecError, ValueError):
        pass
    try:
        payload.decode("utf-8")
        return TEXT
    except UnicodeDecodeError:
        return OPAQUE


@dataclass(frozen=True)
class BridgeFrame:
    topic: str
    seq: int
    publish_instant: float
    encoding: int
    payload: bytes

    def __post_init__(self):
        if self.encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding tag {self.encoding}")

    @classmethod
    def from_message(cls, message) -> "BridgeFrame":
        return cls(message.topic, message.seq, message.publish_instant,
                   classify_payload(message.payload), message.payload)

    def to_bytes(self) -> bytes:
        topic = self.topic.encode("utf-8")
        return (_TOPIC_LEN.pack(len(topic)) + topic
                + _BODY.pack(self.seq, max(0, round(self.publish_instant * 1e9)), self.encoding,
                             len(self.payload))
                + self.payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BridgeFrame":
        if len(data) < _TOPIC_LEN.size:
            raise ValueError("bridge frame too short")
        (n,) = _TOPIC_LEN.unpack_from(data, 0)
        offset = _TOPIC_LEN.size + n
        if len(data) < offset + _BODY.size:
            raise ValueError("bridge frame truncated")
        topic = data[_TOPIC_LEN.size:offset].decode("utf-8")
        seq, instant_ns, encoding, length = _BODY.unpack_from(data, offset)
        payload = data[offset + _BODY.size:]
        if len(payload) != length:
            raise ValueError(f"payload is {len(payload)} bytes, header says {length}")
        return cls(topic, seq, instant_ns / 1e9, encoding, bytes(payload))

    def to_text(self) -> str:
        doc = {"topic": self.topic, "seq": self.seq, "publish_instant": self.publish_instant,
               "encoding": ENCODINGS[self.encoding]}
        if self.encoding == TEXT:
            doc["payload"] = self.payload.decode("utf-8")
        else:
            doc["payload_b64"] = base64.b64encode(self.payload).decode("ascii")
        return json.dumps(doc)


def keepalive(instant: float) -> str:
    return json.dumps({"op": "keepalive", "instant": instant})
