"""
Transparent compression nodes.

The encoder runs next to the publisher: it subscribes T/src, publishes T/enc and listens for
keyframe requests on T/enc/resync. Each decoder runs next to a subscriber: it subscribes
T/enc and republishes T with local scope. Payloads on T are serialized Frames.
"""
import json
import logging
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from constants import KEYFRAME_INTERVAL
from errors import CodecError, CorruptInput, ResyncRequired

from . import delta
from .frame import Frame
from .perframe import per_frame_decode, per_frame_encode

__all__ = ["StreamPacket", "StreamCodec", "CODECS", "register_codec", "make_codec",
           "EncoderNode", "DecoderNode", "src_topic", "enc_topic", "resync_topic"]

log = logging.getLogger(__name__)


def src_topic(topic: str) -> str:
    return f"{topic}/src"


def enc_topic(topic: str) -> str:
    return f"{topic}/enc"


def resync_topic(topic: str) -> str:
    return f"{topic}/enc/resync"


_PACKET = struct.Struct(">4sBQd")
_PACKET_MAGIC = b"FSP1"
_MODE_IDS = {"raw": 0, "per-frame": 1, "streaming": 2}
_MODE_NAMES = {v: k for k, v in _MODE_IDS.items()}


@dataclass(frozen=True)
class StreamPacket:
    """What travels on T/enc: codec mode, source frame index, capture instant, body."""

    mode: str
    frame_index: int
    capture_instant: float
    body: bytes

    def to_bytes(self) -> bytes:
        return _PACKET.pack(_PACKET_MAGIC, _MODE_IDS.get(self.mode, 255), self.frame_index,
                            self.capture_instant) + self.body

    @classmethod
    def from_bytes(cls, data: bytes) -> "StreamPacket":
        if len(data) < _PACKET.size:
            raise CorruptInput("stream packet shorter than its header")
        magic, mode, index, instant = _PACKET.unpack_from(data, 0)
        if magic != _PACKET_MAGIC:
            raise CorruptInput("not a stream packet")
        return cls(_MODE_NAMES.get(mode, "plugin"), index, instant, bytes(data[_PACKET.size:]))


class StreamCodec(Protocol):
    """Codec plug-in slot. Implementations may be lossy; the built-ins are not."""

    mode: str

    def encode(self, frame: Frame) -> bytes: ...

    def decode(self, body: bytes, frame_index: int, capture_instant: float) -> Frame: ...

    def request_keyframe(self) -> None: ...


class RawCodec:
    mode = "raw"

    def encode(self, frame: Frame) -> bytes:
        return frame.to_bytes()

    def decode(self, body: bytes, frame_index: int, capture_instant: float) -> Frame:
        return Frame.from_bytes(body)

    def request_keyframe(self) -> None:
        pass


class PerFrameCodec:
    mode = "per-frame"

    def encode(self, frame: Frame) -> bytes:
        return per_frame_encode(frame)

    def decode(self, body: bytes, frame_index: int, capture_instant: float) -> Frame:
        return per_frame_decode(body)

    def request_keyframe(self) -> None:
        pass


class StreamingCodec:
    mode = "streaming"

    def __init__(self, keyframe_interval: int = KEYFRAME_INTERVAL):
        self.state = delta.CodecState(keyframe_interval=keyframe_interval)

    def encode(self, frame: Frame) -> bytes:
        return delta.encode(self.state, frame).to_bytes()

    def decode(self, body: bytes, frame_index: int, capture_instant: float) -> Frame:
        chunk = delta.CodecChunk.from_bytes(body)
        return delta.decode(self.state, chunk, frame_index=frame_index,
                            capture_instant=capture_instant)

    def request_keyframe(self) -> None:
        self.state.request_keyframe()


CODECS: dict[str, Callable[..., StreamCodec]] = {
    "raw": RawCodec,
    "per-frame": PerFrameCodec,
    "streaming": StreamingCodec,
}


def register_codec(mode: str, factory: Callable[..., StreamCodec]) -> None:
    CODECS[mode] = factory


def make_codec(mode: str, keyframe_interval: int = KEYFRAME_INTERVAL) -> StreamCodec:
    factory = CODECS.get(mode)
    if factory is None:
        raise CodecError(f"unknown codec mode {mode!r} (known: {', '.join(CODECS)})")
    if mode == "streaming":
        return factory(keyframe_interval)
    return factory()


class EncoderNode:
    """
    Args:
        runtime: the robot machine's PubSubRuntime
        local_passthrough: also republish raw frames on T for subscribers on this machine
    """

    def __init__(self, runtime, name: str, topic: str, mode: str = "streaming", *,
                 keyframe_interval: int = KEYFRAME_INTERVAL, local_passthrough: bool = False):
        self.runtime = runtime
        self.name = name
        self.topic = topic
        self.codec = make_codec(mode, keyframe_interval)
        self.local_passthrough = local_passthrough
        self.encoded = 0
        self.bytes_out = 0
        self.resyncs = 0
        runtime.add_node(name)
        runtime.advertise(name, enc_topic(topic))
        if local_passthrough:
            runtime.advertise(name, topic)
        runtime.subscribe(name, src_topic(topic), self._on_frame)
        runtime.subscribe(name, resync_topic(topic), self._on_resync)

    def _on_frame(self, message) -> None:
        frame = Frame.from_bytes(message.payload)
        if self.local_passthrough:
            self.runtime.publish(self.name, self.topic, message.payload, scope="local",
                                 instant=message.publish_instant)
        packet = StreamPacket(self.codec.mode, frame.frame_index, frame.capture_instant,
                              self.codec.encode(frame)).to_bytes()
        self.encoded += 1
        self.bytes_out += len(packet)
        self.runtime.publish(self.name, enc_topic(self.topic), packet,
                             instant=message.publish_instant)

    def _on_resync(self, message) -> None:
        self.resyncs += 1
        self.codec.request_keyframe()
        log.debug("%s: keyframe requested (%s)", self.name, message.payload[:80])


class DecoderNode:
    def __init__(self, runtime, name: str, topic: str, mode: str = "streaming", *,
                 keyframe_interval: int = KEYFRAME_INTERVAL):
        self.runtime = runtime
        self.name = name
        self.topic = topic
        self.codec = make_codec(mode, keyframe_interval)
        self.decoded = 0
        self.resync_requests = 0
        self.errors = 0
        runtime.add_node(name)
        runtime.advertise(name, topic)
        runtime.advertise(name, resync_topic(topic))
        runtime.subscribe(name, enc_topic(topic), self._on_packet)

    def _on_packet(self, message) -> None:
        try:
            packet = StreamPacket.from_bytes(message.payload)
            frame = self.codec.decode(packet.body, packet.frame_index, packet.capture_instant)
        except ResyncRequired as e:
            self.resync_requests += 1
            request = json.dumps({"expected": e.expected, "got": e.got}).encode()
            self.runtime.publish(self.name, resync_topic(self.topic), request)
            return
        except CodecError as e:
            self.errors += 1
            log.warning("%s: dropped undecodable packet: %s", self.name, e)
            self.codec.request_keyframe()
            self.runtime.publish(self.name, resync_topic(self.topic), b'{"error": "corrupt"}')
            return
        self.decoded += 1
        self.runtime.publish(self.name, self.topic, frame.to_bytes(), scope="local",
                             instant=message.publish_instant)

    @property
    def last_frame(self) -> Optional[Frame]:
        state = getattr(self.codec, "state", None)
        return state.last if state is not None else None
