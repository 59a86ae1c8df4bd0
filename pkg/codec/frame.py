import struct
from dataclasses import dataclass

import numpy as np

from constants import MAX_FRAME_SIDE
from errors import CorruptInput, DimensionOverflow

__all__ = ["Frame", "check_dimensions"]

# width u16 | height u16 | channels u8 | capture_instant f64 | frame_index u64
_META = struct.Struct(">HHBdQ")


def check_dimensions(width: int, height: int, channels: int) -> None:
    if width > MAX_FRAME_SIDE or height > MAX_FRAME_SIDE:
        raise DimensionOverflow(f"{width}x{height} exceeds {MAX_FRAME_SIDE} per side")
    if width < 1 or height < 1:
        raise ValueError(f"invalid frame size {width}x{height}")
    if channels not in (1, 3, 4):
        raise ValueError(f"channels must be 1, 3 or 4, not {channels}")


@dataclass(frozen=True)
class Frame:
    """Row-major uint8 image plus capture metadata."""

    width: int
    height: int
    channels: int
    pixels: bytes
    capture_instant: float = 0.0
    frame_index: int = 0

    def __post_init__(self):
        check_dimensions(self.width, self.height, self.channels)
        if len(self.pixels) != self.width * self.height * self.channels:
            raise ValueError(f"pixel buffer is {len(self.pixels)} bytes, expected "
                             f"{self.width * self.height * self.channels}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.height, self.width, self.channels

    def array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.shape)

    @classmethod
    def from_array(cls, arr: np.ndarray, capture_instant: float = 0.0,
                   frame_index: int = 0) -> "Frame":
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(w, h, c, np.ascontiguousarray(arr, dtype=np.uint8).tobytes(),
                   capture_instant, frame_index)

    def to_bytes(self) -> bytes:
        return _META.pack(self.width, self.height, self.channels, self.capture_instant,
                          self.frame_index) + self.pixels

    @classmethod
    def from_bytes(cls, data: bytes) -> "Frame":
        if len(data) < _META.size:
            raise CorruptInput("frame shorter than its header")
        w, h, c, instant, index = _META.unpack_from(data, 0)
        try:
            return cls(w, h, c, bytes(data[_META.size:]), instant, index)
        except ValueError as e:
            raise CorruptInput(str(e)) from None
