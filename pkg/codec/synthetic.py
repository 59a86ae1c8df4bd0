"""
Procedural low-motion video: a gradient background with sparse noise frozen at frame 0,
and one constant-colour block sliding across it.
"""
import numpy as np

from constants import VIDEO_CHANNELS, VIDEO_HEIGHT, VIDEO_WIDTH

from .frame import Frame, check_dimensions

__all__ = ["SyntheticVideo"]


class SyntheticVideo:
    """
    Usage:
        video = SyntheticVideo(640, 480, 3, seed=7)
        frame = video.frame(12, capture_instant=clock.now())
    """

    def __init__(self, width: int = VIDEO_WIDTH, height: int = VIDEO_HEIGHT,
                 channels: int = VIDEO_CHANNELS, *, seed: int = 0, block: int = 32,
                 speed: int = 4, noise: float = 0.005):
        check_dimensions(width, height, channels)
        self.width, self.height, self.channels = width, height, channels
        self.block = max(1, min(block, width, height))
        self.speed = speed
        rng = np.random.default_rng(seed)

        ramp = np.linspace(0, 255, width, dtype=np.float64)
        offsets = np.arange(channels, dtype=np.float64) * 40.0
        background = (ramp[None, :, None] + offsets[None, None, :]) % 256
        background = np.broadcast_to(background, (height, width, channels)).astype(np.uint8)
        background = background.copy()
        mask = rng.random((height, width)) < noise
        background[mask] = rng.integers(0, 256, size=(int(mask.sum()), channels), dtype=np.uint8)
        self.background = background
        self.color = rng.integers(0, 256, size=channels, dtype=np.uint8)

    def position(self, index: int) -> tuple[int, int]:
        span_x = max(1, self.width - self.block + 1)
        span_y = max(1, self.height - self.block + 1)
        return (index * self.speed) % span_x, (index * self.speed // 2) % span_y

    def frame(self, index: int, capture_instant: float = 0.0) -> Frame:
        arr = self.background.copy()
        x, y = self.position(index)
        arr[y:y + self.block, x:x + self.block] = self.color
        return Frame.from_array(arr, capture_instant, index)
