"""
Stateless lossless image compression: a horizontal "sub" predictor per channel, then zlib.
"""
import struct
import zlib

import numpy as np

from constants import ZLIB_LEVEL
from errors import CorruptInput

from .frame import Frame, check_dimensions

__all__ = ["per_frame_encode", "per_frame_decode", "sub_filter", "sub_unfilter"]

_MAGIC = b"FPF1"
# magic | width u16 | height u16 | channels u8 | capture_instant f64 | frame_index u64
_META = struct.Struct(">4sHHBdQ")


def sub_filter(arr: np.ndarray) -> bytes:
    """Replace each sample by its difference to the same channel of the left neighbour."""
    out = arr.copy()
    out[:, 1:, :] = arr[:, 1:, :] - arr[:, :-1, :]
    return out.tobytes()


def sub_unfilter(raw: bytes, shape: tuple[int, int, int]) -> bytes:
    filtered = np.frombuffer(raw, dtype=np.uint8).reshape(shape)
    return np.cumsum(filtered, axis=1, dtype=np.uint8).tobytes()


def per_frame_encode(frame: Frame, level: int = ZLIB_LEVEL) -> bytes:
    header = _META.pack(_MAGIC, frame.width, frame.height, frame.channels,
                        frame.capture_instant, frame.frame_index)
    return header + zlib.compress(sub_filter(frame.array()), level)


def per_frame_decode(data: bytes) -> Frame:
    if len(data) < _META.size:
        raise CorruptInput("compressed frame shorter than its header")
    magic, w, h, c, instant, index = _META.unpack_from(data, 0)
    if magic != _MAGIC:
        raise CorruptInput("not a compressed frame")
    try:
        check_dimensions(w, h, c)
        raw = zlib.decompress(data[_META.size:])
    except (ValueError, zlib.error) as e:
        raise CorruptInput(str(e)) from None
    if len(raw) != w * h * c:
        raise CorruptInput(f"decompressed {len(raw)} bytes, expected {w * h * c}")
    return Frame(w, h, c, sub_unfilter(raw, (h, w, c)), instant, index)
