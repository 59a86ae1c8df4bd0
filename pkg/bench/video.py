"""
Streaming-video round trip.

The robot captures synthetic frames at the target rate and publishes them to a cloud echo
node, which answers each frame with a small receipt; latency is receipt time minus capture
time, both read on the robot. Everything runs on a simulated clock over an emulated link.

Admission is keep-last-1: a frame captured while the uplink is still serialising the
previous one waits, and is replaced by the next capture if that comes first.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from constants import (ROBOT_MACHINE, VIDEO_CHANNELS, VIDEO_FPS, VIDEO_FRAMES, VIDEO_HEIGHT,
                       VIDEO_WARMUP_FRAMES, VIDEO_WIDTH)
from errors import BenchError
from launch.compression import insert_compression_nodes
from launch.spec import LaunchSpec, MachineSpec, NodeSpec
from orchestrator.behaviors import make_behavior
from overlay.transport import Tap
from provision.link import LinkModel
from pubsub.mesh import Mesh

from .report import BenchReport

__all__ = ["VideoBenchConfig", "VIDEO_MODES", "video_launch_spec", "run_video_bench",
           "run_video_suite"]

log = logging.getLogger(__name__)

VIDEO_MODES = ("raw", "per-frame", "streaming")
CAMERA_TOPIC = "/camera"
ACK_TOPIC = "/camera/ack"
CLOUD = "cloud"


@dataclass(frozen=True)
class VideoBenchConfig:
    frames: int = VIDEO_FRAMES
    width: int = VIDEO_WIDTH
    height: int = VIDEO_HEIGHT
    channels: int = VIDEO_CHANNELS
    fps: float = VIDEO_FPS
    link: LinkModel = field(default_factory=LinkModel)
    mode: str = "streaming"
    warmup: int = VIDEO_WARMUP_FRAMES
    seed: int = 0
    drain_s: float = 2.0

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frame count must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps target must be > 0")
        if self.mode not in VIDEO_MODES:
            raise ValueError(f"unknown mode {self.mode!r} (known: {', '.join(VIDEO_MODES)})")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")

    @property
    def measured_from(self) -> int:
        """First frame index that counts; short runs measure everything."""
        return self.warmup if self.frames > self.warmup else 0


def video_launch_spec(config: VideoBenchConfig) -> LaunchSpec:
    """camera (robot) -> echo (cloud) -> ack back to camera, compressed unless raw."""
    nodes = (
        NodeSpec("camera", "image-source", ROBOT_MACHINE,
                 publishes=(CAMERA_TOPIC,), subscribes=(ACK_TOPIC,),
                 params={"drive": "manual", "rate_hz": config.fps, "width": config.width,
                         "height": config.height, "channels": config.channels,
                         "seed": config.seed}),
        NodeSpec("echo", "echo-ack", CLOUD, publishes=(ACK_TOPIC,), subscribes=(CAMERA_TOPIC,)),
    )
    compression = () if config.mode == "raw" else ((CAMERA_TOPIC, config.mode),)
    spec = LaunchSpec("video-bench", (MachineSpec(CLOUD, "mock-cloud"),), nodes, compression)
    return insert_compression_nodes(spec.validate())


def run_video_bench(config: VideoBenchConfig, *, tap: Optional[Tap] = None) -> dict:
    """
    Returns:
        fps_received, latency_mean_ms, latency_median_ms, latency_p95_ms, bytes_on_wire,
        frames_captured, frames_sent, frames_dropped

    Raises:
        BenchError: no frame was acknowledged inside the measurement window
    """
    spec = video_launch_spec(config)
    mesh = Mesh([ROBOT_MACHINE, CLOUD], links={CLOUD: config.link}, seed=config.seed)
    network, clock = mesh.network, mesh.clock
    robot_addr = mesh.endpoints[ROBOT_MACHINE].address
    cloud_addr = mesh.endpoints[CLOUD].address
    uplink = network.link(robot_addr, cloud_addr)
    downlink = network.link(cloud_addr, robot_addr)
    if tap is not None:
        network.add_tap(tap)
    wire_before = uplink.bytes_sent + downlink.bytes_sent
    counters: Counter = Counter()

    try:
        behaviors = {node.name: make_behavior(mesh[node.machine], node).start()
                     for node in spec.nodes}
        mesh.settle()
        wanted = {t for n in spec.nodes_on(CLOUD) for t in n.effective_subscribes}
        if not wanted <= mesh[ROBOT_MACHINE].peers.remote_topics(clock.now()):
            raise BenchError("cloud subscriptions never reached the robot")

        source = behaviors["camera"]
        period = 1.0 / config.fps
        start = clock.now()
        pending: list[Optional[float]] = [None]

        def flush() -> None:
            if pending[0] is None:
                return
            if not uplink.idle_at(clock.now()):
                network.call_at(uplink.busy_until, flush)
                return
            instant, pending[0] = pending[0], None
            source.emit(instant)
            counters["sent"] += 1

        def capture(instant: float) -> None:
            counters["captured"] += 1
            if pending[0] is not None:
                counters["dropped"] += 1
            pending[0] = instant
            flush()

        for i in range(config.frames):
            instant = start + i * period
            network.call_at(instant, lambda instant=instant: capture(instant))
        window_start = start + config.measured_from * period
        window_end = start + config.frames * period
        network.run_until(window_end + config.drain_s)
    finally:
        mesh.close()

    latencies = np.array([latency for instant, latency in source.samples
                          if window_start <= instant < window_end])
    if latencies.size == 0:
        raise BenchError(f"no frames delivered in {config.mode} mode")
    latencies_ms = latencies * 1000.0
    result = {
        "fps_received": latencies.size / (window_end - window_start),
        "latency_mean_ms": float(latencies_ms.mean()),
        "latency_median_ms": float(np.median(latencies_ms)),
        "latency_p95_ms": float(np.percentile(latencies_ms, 95)),
        "bytes_on_wire": uplink.bytes_sent + downlink.bytes_sent - wire_before,
        "frames_captured": counters["captured"],
        "frames_sent": counters["sent"],
        "frames_dropped": counters["dropped"],
    }
    log.info("video %s: %.2f fps, %.1f ms mean latency", config.mode, result["fps_received"],
             result["latency_mean_ms"])
    return result


def run_video_suite(modes: Sequence[str] = VIDEO_MODES, *, seed: int = 0,
                    frames: int = VIDEO_FRAMES, link: Optional[LinkModel] = None) -> BenchReport:
    link = link or LinkModel()
    report = BenchReport("video", "Mode", [
        ("fps_received", "FPS"), ("latency_mean_ms", "Latency (ms)"),
        ("latency_median_ms", "Median (ms)"), ("latency_p95_ms", "p95 (ms)"),
        ("bytes_on_wire", "Bytes on wire")],
        environment={"seed": seed, "frames": frames, **link.to_dict()})
    for mode in modes:
        report.add(mode, **run_video_bench(VideoBenchConfig(frames=frames, link=link, mode=mode,
                                                            seed=seed)))
    return report
