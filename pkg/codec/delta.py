"""
Streaming keyframe + delta codec (lossless).

Keyframes carry a per-frame compressed image. Deltas carry the per-byte difference to the
previous frame (mod 256), zero-run-length coded and then deflated.

Chunk layout (big-endian): kind u8 | base_index u64 | width u16 | height u16 | channels u8
| encoded_len u32 | encoded
"""
import struct
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from constants import KEYFRAME_INTERVAL, MIN_ZERO_RUN, ZLIB_LEVEL
from errors import CorruptInput, ResyncRequired

from .frame import Frame, check_dimensions
from .perframe import sub_filter, sub_unfilter

__all__ = ["KEYFRAME", "DELTA", "CodecChunk", "CodecState", "encode", "decode",
           "zero_rle", "zero_rld"]

KEYFRAME = 0
DELTA = 1

_CHUNK = struct.Struct(">BQHHBI")
_TOKEN = struct.Struct(">II")


@dataclass(frozen=True)
class CodecChunk:
    kind: int
    base_index: int
    width: int
    height: int
    channels: int
    encoded: bytes

    @property
    def is_keyframe(self) -> bool:
        return self.kind == KEYFRAME

    def to_bytes(self) -> bytes:
        return _CHUNK.pack(self.kind, self.base_index, self.width, self.height, self.channels,
                           len(self.encoded)) + self.encoded

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodecChunk":
        if len(data) < _CHUNK.size:
            raise CorruptInput("chunk shorter than its header")
        kind, base, w, h, c, length = _CHUNK.unpack_from(data, 0)
        if kind not in (KEYFRAME, DELTA):
            raise CorruptInput(f"unknown chunk kind {kind}")
        if len(data) - _CHUNK.size != length:
            raise CorruptInput("chunk length mismatch")
        return cls(kind, base, w, h, c, bytes(data[_CHUNK.size:]))


@dataclass
class CodecState:
    """One direction of one stream. Not thread-safe."""

    keyframe_interval: int = KEYFRAME_INTERVAL
    last: Optional[Frame] = None
    frames_since_keyframe: int = 0
    keyframe_requested: bool = False

    def request_keyframe(self) -> None:
        self.keyframe_requested = True

    def reset(self) -> None:
        self.last = None
        self.frames_since_keyframe = 0


def zero_rle(buf: np.ndarray) -> bytes:
    """Tokens of (zero_run u32, literal_len u32, literal bytes); short zero runs stay literal."""
    n = buf.size
    if n == 0:
        return b""
    nonzero = buf != 0
    edges = np.flatnonzero(nonzero[1:] != nonzero[:-1]) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [n]))
    long_zero = ~nonzero[starts] & (ends - starts >= MIN_ZERO_RUN)
    runs = list(zip(starts[long_zero].tolist(), ends[long_zero].tolist()))

    out = bytearray()
    zero, pos = 0, 0
    if runs and runs[0][0] == 0:
        zero, pos = runs[0][1], runs[0][1]
        runs = runs[1:]
    for s, e in runs:
        out += _TOKEN.pack(zero, s - pos)
        out += buf[pos:s].tobytes()
        zero, pos = e - s, e
    out += _TOKEN.pack(zero, n - pos)
    out += buf[pos:n].tobytes()
    return bytes(out)


def zero_rld(data: bytes, length: int) -> np.ndarray:
    out = np.zeros(length, dtype=np.uint8)
    pos = off = 0
    while off < len(data):
        if off + _TOKEN.size > len(data):
            raise CorruptInput("truncated run-length token")
        zero, lit = _TOKEN.unpack_from(data, off)
        off += _TOKEN.size
        pos += zero
        if off + lit > len(data) or pos + lit > length:
            raise CorruptInput("run-length token overruns the frame")
        out[pos:pos + lit] = np.frombuffer(data, dtype=np.uint8, count=lit, offset=off)
        pos += lit
        off += lit
    if pos != length:
        raise CorruptInput(f"run-length data covers {pos} of {length} bytes")
    return out


def encode(state: CodecState, frame: Frame, level: int = ZLIB_LEVEL) -> CodecChunk:
    """Keyframe on first frame, dimension change, request or interval; delta otherwise."""
    last = state.last
    keyframe = (
        last is None
        or last.shape != frame.shape
        or state.keyframe_requested
        or state.frames_since_keyframe >= state.keyframe_interval - 1
    )
    if keyframe:
        encoded = zlib.compress(sub_filter(frame.array()), level)
        chunk = CodecChunk(KEYFRAME, frame.frame_index, frame.width, frame.height,
                           frame.channels, encoded)
        state.frames_since_keyframe = 0
        state.keyframe_requested = False
    else:
        diff = (frame.array() - last.array()).reshape(-1)
        encoded = zlib.compress(zero_rle(diff), level)
        chunk = CodecChunk(DELTA, last.frame_index, frame.width, frame.height,
                           frame.channels, encoded)
        state.frames_since_keyframe += 1
    state.last = frame
    return chunk


def decode(state: CodecState, chunk: CodecChunk, *, frame_index: Optional[int] = None,
           capture_instant: float = 0.0) -> Frame:
    """
    Rebuild the frame. `frame_index` names the decoded frame (defaults to the keyframe's own
    index, or base + 1 for deltas). A delta whose base is not the held frame raises
    ResyncRequired and leaves the state untouched.
    """
    check_dimensions(chunk.width, chunk.height, chunk.channels)
    shape = (chunk.height, chunk.width, chunk.channels)
    size = chunk.width * chunk.height * chunk.channels
    try:
        raw = zlib.decompress(chunk.encoded)
    except zlib.error as e:
        raise CorruptInput(str(e)) from None

    if chunk.kind == KEYFRAME:
        if len(raw) != size:
            raise CorruptInput(f"keyframe holds {len(raw)} bytes, expected {size}")
        pixels = sub_unfilter(raw, shape)
        index = chunk.base_index if frame_index is None else frame_index
    else:
        last = state.last
        if last is None or last.frame_index != chunk.base_index or last.shape != shape:
            raise ResyncRequired(expected=-1 if last is None else last.frame_index,
                                 got=chunk.base_index)
        diff = zero_rld(raw, size).reshape(shape)
        pixels = (last.array() + diff).tobytes()
        index = chunk.base_index + 1 if frame_index is None else frame_index

    frame = Frame(chunk.width, chunk.height, chunk.channels, pixels, capture_instant, index)
    state.last = frame
    return frame
