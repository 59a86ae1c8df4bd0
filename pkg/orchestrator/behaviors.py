"""
Built-in node behaviors. A behavior is a node on one machine's PubSubRuntime; it uses the
node's effective (remapped) topic names.

    image-source       publishes synthetic frames, measures round trips from acks
    echo-ack           answers every message with a small receipt
    synthetic-compute  burns units/speed seconds per request, then replies
    sink               counts and fingerprints what it receives
    custom-executable  bridges a workspace program's stdin/stdout to topics
    stream-encoder     codec encoder inserted for compressed topics
    stream-decoder     codec decoder inserted for compressed topics
"""
import hashlib
import json
import logging
import statistics
import subprocess
import sys
import threading
from collections import Counter, defaultdict
from pathlib import Path
from typing import Any, Optional

from codec.frame import Frame
from codec.nodes import DecoderNode, EncoderNode
from codec.synthetic import SyntheticVideo
from constants import KEYFRAME_INTERVAL, VIDEO_CHANNELS, VIDEO_FPS, VIDEO_HEIGHT, VIDEO_WIDTH
from errors import AgentError
from launch.spec import NodeSpec
from pubsub.runtime import ACKED, BEST_EFFORT, Message, PubSubRuntime

__all__ = ["Behavior", "ImageSource", "EchoAck", "SyntheticCompute", "Sink", "CustomExecutable",
           "StreamEncoder", "StreamDecoder", "BEHAVIOR_TYPES", "make_behavior", "ack_payload"]

log = logging.getLogger(__name__)


def ack_payload(message: Message) -> bytes:
    return json.dumps({"seq": message.seq, "instant": message.publish_instant,
                       "bytes": len(message.payload)}).encode()


class Behavior:
    kind = ""

    def __init__(self, runtime: PubSubRuntime, node: NodeSpec, *, workdir: Optional[Path] = None):
        self.runtime = runtime
        self.node = node
        self.name = node.name
        self.params: dict[str, Any] = dict(node.params)
        self.workdir = Path(workdir) if workdir else None
        self.clock = runtime.clock
        self.stats: Counter = Counter()
        self.running = False
        runtime.add_node(self.name)

    @property
    def mode(self) -> str:
        return ACKED if self.params.get("acked") else BEST_EFFORT

    def _first_publish(self) -> Optional[str]:
        pubs = self.node.effective_publishes
        return pubs[0] if pubs else None

    def start(self) -> "Behavior":
        for topic in self.node.effective_publishes:
            self.runtime.advertise(self.name, topic)
        for topic in self.node.effective_subscribes:
            self.runtime.subscribe(self.name, topic, self.on_message, self.mode)
        self.running = True
        return self

    def on_message(self, message: Message) -> None:
        self.stats["received"] += 1

    def stop(self) -> None:
        self.running = False
        self.runtime.remove_node(self.name)

    def status(self) -> dict:
        return {"behavior": self.kind, "machine": self.runtime.machine, "running": self.running,
                **dict(self.stats)}


class ImageSource(Behavior):
    """
    Params: rate_hz, frames (0 = unbounded), width, height, channels, seed, drive
    (thread: own timer; manual: the caller invokes emit()).
    """

    kind = "image-source"

    def __init__(self, runtime, node, **kw):
        super().__init__(runtime, node, **kw)
        self.rate_hz = float(self.params.get("rate_hz", VIDEO_FPS))
        self.limit = int(self.params.get("frames", 0))
        self.video = SyntheticVideo(int(self.params.get("width", VIDEO_WIDTH)),
                                    int(self.params.get("height", VIDEO_HEIGHT)),
                                    int(self.params.get("channels", VIDEO_CHANNELS)),
                                    seed=int(self.params.get("seed", 0)))
        self.index = 0
        self.samples: list[tuple[float, float]] = []     # (capture instant, round trip)
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "ImageSource":
        super().start()
        if self.params.get("drive", "thread") == "thread" and self._first_publish():
            self._stop.clear()
            self._thread = threading.Thread(target=self._loop, name=f"fog-src-{self.name}",
                                            daemon=True)
            self._thread.start()
        return self

    def _loop(self) -> None:
        period = 1.0 / self.rate_hz
        next_due = self.clock.now()
        while not self._stop.is_set():
            if self.limit and self.index >= self.limit:
                return
            self.emit()
            next_due += period
            self._stop.wait(max(0.0, next_due - self.clock.now()))

    def emit(self, instant: Optional[float] = None) -> Frame:
        now = self.clock.now() if instant is None else instant
        frame = self.video.frame(self.index, capture_instant=now)
        self.index += 1
        self.runtime.publish(self.name, self._first_publish(), frame.to_bytes(), instant=now)
        self.stats["frames_sent"] += 1
        return frame

    def on_message(self, message: Message) -> None:
        try:
            ack = json.loads(message.payload)
        except ValueError:
            self.stats["bad_acks"] += 1
            return
        instant = float(ack["instant"])
        self.samples.append((instant, self.clock.now() - instant))
        self.stats["acks"] += 1

    @property
    def latencies(self) -> list[float]:
        return [latency for _, latency in self.samples]

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join(timeout=1.0)
        super().stop()

    def status(self) -> dict:
        out = super().status()
        if self.latencies:
            out["latency_mean_ms"] = round(statistics.fmean(self.latencies) * 1000, 3)
        return out


class EchoAck(Behavior):
    kind = "echo-ack"

    def on_message(self, message: Message) -> None:
        super().on_message(message)
        topic = self._first_publish()
        if topic is not None:
            self.runtime.publish(self.name, topic, ack_payload(message))
            self.stats["acks_sent"] += 1


class SyntheticCompute(Behavior):
    """Params: units (per request), speed (units per second), response_bytes."""

    kind = "synthetic-compute"

    def on_message(self, message: Message) -> None:
        super().on_message(message)
        units = float(self.params.get("units", 1.0))
        speed = float(self.params.get("speed", 1.0))
        if speed <= 0:
            raise AgentError(f"{self.name}: speed must be > 0")
        self.clock.sleep(units / speed)
        self.stats["compute_s_total"] += units / speed
        topic = self._first_publish()
        if topic is None:
            return
        head = ack_payload(message)
        size = int(self.params.get("response_bytes", len(head)))
        self.runtime.publish(self.name, topic, head + b" " * max(0, size - len(head)))
        self.stats["responses"] += 1


class Sink(Behavior):
    """Counts messages per topic and keeps a running fingerprint of the payload sequence."""

    kind = "sink"

    def __init__(self, runtime, node, **kw):
        super().__init__(runtime, node, **kw)
        self.digests: dict[str, "hashlib._Hash"] = defaultdict(lambda: hashlib.blake2b(digest_size=16))
        self.counts: Counter = Counter()
        self.first_instant: Optional[float] = None
        self.keep = bool(self.params.get("keep_payloads", False))
        self.payloads: dict[str, list[bytes]] = defaultdict(list)

    def on_message(self, message: Message) -> None:
        super().on_message(message)
        if self.first_instant is None:
            self.first_instant = self.clock.now()
        self.counts[message.topic] += 1
        self.stats["bytes"] += len(message.payload)
        self.digests[message.topic].update(len(message.payload).to_bytes(8, "big") + message.payload)
        if self.keep:
            self.payloads[message.topic].append(message.payload)

    def fingerprint(self) -> dict[str, str]:
        return {t: d.hexdigest() for t, d in sorted(self.digests.items())}

    def status(self) -> dict:
        out = super().status()
        out["topics"] = dict(self.counts)
        out["fingerprint"] = self.fingerprint()
        return out


class CustomExecutable(Behavior):
    """
    Params: path (inside the workspace), args.
    Each stdout line is published on the first publish topic; each received payload is
    written to stdin as one line.
    """

    kind = "custom-executable"

    def __init__(self, runtime, node, **kw):
        super().__init__(runtime, node, **kw)
        self._proc: Optional[subprocess.Popen] = None
        self._write_lock = threading.Lock()

    def _command(self) -> list[str]:
        if self.workdir is None:
            raise AgentError(f"{self.name}: custom executables need a workspace")
        path = (self.workdir / "workspace" / str(self.params["path"])).resolve()
        if not path.is_file():
            raise AgentError(f"{self.name}: {path.name} is not in the workspace")
        args = [str(a) for a in self.params.get("args", [])]
        if path.suffix == ".py":
            return [sys.executable, str(path), *args]
        path.chmod(path.stat().st_mode | 0o100)
        return [str(path), *args]

    def start(self) -> "CustomExecutable":
        super().start()
        self._proc = subprocess.Popen(self._command(), cwd=str(self.workdir / "workspace"),
                                      stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        threading.Thread(target=self._pump, name=f"fog-exec-{self.name}", daemon=True).start()
        return self

    def _pump(self) -> None:
        topic = self._first_publish()
        for line in self._proc.stdout:
            self.stats["lines_out"] += 1
            if topic is not None and self.running:
                self.runtime.publish(self.name, topic, line.rstrip(b"\n"))

    def on_message(self, message: Message) -> None:
        super().on_message(message)
        if self._proc is None or self._proc.poll() is not None:
            return
        with self._write_lock:
            try:
                self._proc.stdin.write(message.payload.replace(b"\n", b" ") + b"\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, ValueError):
                self.stats["write_errors"] += 1

    def stop(self) -> None:
        super().stop()
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def status(self) -> dict:
        out = super().status()
        if self._proc is not None:
            out["exit_code"] = self._proc.poll()
        return out


class StreamEncoder(Behavior):
    kind = "stream-encoder"

    def start(self) -> "StreamEncoder":
        self.codec_node = EncoderNode(
            self.runtime, self.name, self.params["topic"], self.params.get("mode", "streaming"),
            keyframe_interval=int(self.params.get("keyframe_interval", KEYFRAME_INTERVAL)),
            local_passthrough=bool(self.params.get("local_passthrough", False)))
        self.running = True
        return self

    def status(self) -> dict:
        out = super().status()
        node = getattr(self, "codec_node", None)
        if node is not None:
            out.update(encoded=node.encoded, bytes_out=node.bytes_out, resyncs=node.resyncs)
        return out


class StreamDecoder(Behavior):
    kind = "stream-decoder"

    def start(self) -> "StreamDecoder":
        self.codec_node = DecoderNode(
            self.runtime, self.name, self.params["topic"], self.params.get("mode", "streaming"),
            keyframe_interval=int(self.params.get("keyframe_interval", KEYFRAME_INTERVAL)))
        self.running = True
        return self

    def status(self) -> dict:
        out = super().status()
        node = getattr(self, "codec_node", None)
        if node is not None:
            out.update(decoded=node.decoded, resync_requests=node.resync_requests,
                       errors=node.errors)
        return out


BEHAVIOR_TYPES: dict[str, type[Behavior]] = {
    cls.kind: cls for cls in (ImageSource, EchoAck, SyntheticCompute, Sink, CustomExecutable,
                              StreamEncoder, StreamDecoder)
}


def make_behavior(runtime: PubSubRuntime, node: NodeSpec, *,
                  workdir: Optional[Path] = None) -> Behavior:
    try:
        cls = BEHAVIOR_TYPES[node.behavior]
    except KeyError:
        raise AgentError(f"unknown behavior {node.behavior!r}") from None
    return cls(runtime, node, workdir=workdir)
