"""
Websocket topic bridge: a best-effort subscriber on the robot's runtime that streams matched
topics to monitoring clients.

    ws://<host>:<port>/topics           subprotocol fogmesh-bridge-v1
    ws://<host>:<port>/topics?mode=text JSON frames instead of the binary layout

Keepalives are JSON text messages. A client over the limit is closed with code 1013.
Clients can only watch; nothing they send reaches a topic.
"""
import asyncio
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import uvicorn
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from constants import (BRIDGE_DEFAULT_PORT, BRIDGE_KEEPALIVE_S, BRIDGE_MAX_CLIENTS, BRIDGE_PATH,
                       BRIDGE_QUEUE_DEPTH, BRIDGE_RATE_CAP_HZ, BRIDGE_SUBPROTOCOL)
from logger import log_event
from pubsub.peers import topic_matches
from pubsub.runtime import BEST_EFFORT, Message, PubSubRuntime

from .frames import BridgeFrame, keepalive
from .streams import ClientStream

__all__ = ["BridgeConfig", "MonitorBridge", "BridgeHandle", "create_app", "start_bridge",
           "CLOSE_TRY_AGAIN_LATER"]

log = logging.getLogger(__name__)

CLOSE_TRY_AGAIN_LATER = 1013
BRIDGE_NODE = "fog-monitor-bridge"


@dataclass(frozen=True)
class BridgeConfig:
    topics: tuple[str, ...]
    port: int = BRIDGE_DEFAULT_PORT
    max_clients: int = BRIDGE_MAX_CLIENTS
    rate_cap_hz: float = BRIDGE_RATE_CAP_HZ
    keepalive_s: float = BRIDGE_KEEPALIVE_S
    queue_depth: int = BRIDGE_QUEUE_DEPTH

    def __post_init__(self):
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port {self.port} out of range")
        if self.rate_cap_hz <= 0:
            raise ValueError("rate cap must be > 0")
        if self.max_clients < 1:
            raise ValueError("max_clients must be >= 1")

    @classmethod
    def from_monitor(cls, monitor) -> "BridgeConfig":
        """Build from a launch document's monitor block (or pass a BridgeConfig through)."""
        if isinstance(monitor, cls):
            return monitor
        return cls(tuple(monitor.topics), monitor.port, monitor.max_clients, monitor.rate_cap_hz)


class MonitorBridge:
    """Subscriptions on one runtime fanned out to client streams."""

    def __init__(self, config: BridgeConfig, runtime: PubSubRuntime):
        self.config = config
        self.runtime = runtime
        self.subscribed: set[str] = set()
        self.clients: list[ClientStream] = []
        self._lock = threading.Lock()
        runtime.add_node(BRIDGE_NODE)
        self.refresh()

    def _candidates(self) -> set[str]:
        now = self.runtime.clock.now()
        known = self.runtime.advertised_topics() | self.runtime.peers.remote_topics(now)
        known |= set(self.runtime.local_topics())
        exact = {p for p in self.config.topics if not p.endswith("*")}
        wild = [p for p in self.config.topics if p.endswith("*")]
        return exact | {t for t in known if any(topic_matches(p, t) for p in wild)}

    def refresh(self) -> list[str]:
        """Subscribe to topics that started matching a wildcard since the last refresh."""
        added = []
        for topic in sorted(self._candidates() - self.subscribed):
            if topic.startswith("/_fog"):
                continue
            self.runtime.subscribe(BRIDGE_NODE, topic, self._on_message, BEST_EFFORT)
            self.subscribed.add(topic)
            added.append(topic)
        if added:
            log.info("bridge: watching %s", ", ".join(added))
        return added

    def _on_message(self, message: Message) -> None:
        frame = BridgeFrame.from_message(message)
        with self._lock:
            clients = list(self.clients)
        for stream in clients:
            stream.offer(frame)

    def open_client(self, wake=None) -> Optional[ClientStream]:
        """A new client stream, or None when the bridge is full."""
        with self._lock:
            if len(self.clients) >= self.config.max_clients:
                return None
            stream = ClientStream(self.config.rate_cap_hz, self.config.queue_depth, wake)
            self.clients.append(stream)
            return stream

    def close_client(self, stream: ClientStream) -> None:
        with self._lock:
            if stream in self.clients:
                self.clients.remove(stream)

    def close(self) -> None:
        with self._lock:
            self.clients.clear()
        self.runtime.remove_node(BRIDGE_NODE)


def create_app(bridge: MonitorBridge) -> FastAPI:
    app = FastAPI(title="fogmesh monitor bridge")
    config = bridge.config

    @app.get("/")
    def index() -> dict:
        return {"path": BRIDGE_PATH, "subprotocol": BRIDGE_SUBPROTOCOL,
                "topics": sorted(bridge.subscribed), "clients": len(bridge.clients),
                "max_clients": config.max_clients, "rate_cap_hz": config.rate_cap_hz}

    @app.websocket(BRIDGE_PATH)
    async def topics(websocket: WebSocket) -> None:
        offered = websocket.scope.get("subprotocols") or []
        await websocket.accept(subprotocol=BRIDGE_SUBPROTOCOL if BRIDGE_SUBPROTOCOL in offered
                               else None)
        loop = asyncio.get_running_loop()
        wake = asyncio.Event()
        stream = bridge.open_client(lambda: loop.call_soon_threadsafe(wake.set))
        if stream is None:
            log.warning("bridge: client refused, %d already connected", config.max_clients)
            await websocket.close(code=CLOSE_TRY_AGAIN_LATER, reason="too many clients")
            return
        text_mode = websocket.query_params.get("mode") == "text"
        last_keepalive = 0.0
        closed = asyncio.Event()

        async def drain_incoming() -> None:
            # observer only: client messages are read and discarded
            try:
                while True:
                    if (await websocket.receive())["type"] == "websocket.disconnect":
                        return
            except (WebSocketDisconnect, RuntimeError):
                return
            finally:
                closed.set()
                wake.set()

        reader = asyncio.create_task(drain_incoming())
        log_event("bridge_client_connected", clients=len(bridge.clients))
        try:
            while not closed.is_set():
                now = time.monotonic()
                for frame in stream.take_due(now):
                    if text_mode:
                        await websocket.send_text(frame.to_text())
                    else:
                        await websocket.send_bytes(frame.to_bytes())
                if now - last_keepalive >= config.keepalive_s:
                    await websocket.send_text(keepalive(now))
                    last_keepalive = now
                    bridge.refresh()
                wait = stream.next_due(now)
                wait = config.keepalive_s if wait is None else min(wait, config.keepalive_s)
                wake.clear()
                try:
                    await asyncio.wait_for(wake.wait(), timeout=max(wait, 0.001))
                except asyncio.TimeoutError:
                    pass
        except (WebSocketDisconnect, RuntimeError, OSError) as e:
            log.debug("bridge: client gone: %s", e)
        finally:
            reader.cancel()
            bridge.close_client(stream)
            log_event("bridge_client_disconnected", clients=len(bridge.clients),
                      **{k: v for k, v in stream.stats.items()})

    return app


@dataclass
class BridgeHandle:
    bridge: MonitorBridge
    server: uvicorn.Server
    thread: threading.Thread
    host: str
    port: int
    errors: list = field(default_factory=list)

    @property
    def url(self) -> str:
        return f"ws://{self.host}:{self.port}{BRIDGE_PATH}"

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=5.0)
        self.bridge.close()


def start_bridge(config, runtime: PubSubRuntime, *, host: str = "127.0.0.1",
                 timeout: float = 5.0) -> BridgeHandle:
    """
    Serve the bridge from a background thread. Port 0 picks a free port.

    Raises:
        OSError: the port is taken or the server did not come up in time
    """
    config = BridgeConfig.from_monitor(config)
    bridge = MonitorBridge(config, runtime)
    server = uvicorn.Server(uvicorn.Config(create_app(bridge), host=host, port=config.port,
                                           log_level="warning", lifespan="off"))
    errors: list = []

    def serve():
        try:
            server.run()
        except (SystemExit, OSError) as e:
            errors.append(e)

    thread = threading.Thread(target=serve, name="fog-monitor-bridge", daemon=True)
    thread.start()
    deadline = time.monotonic() + timeout
    while not server.started and thread.is_alive() and time.monotonic() < deadline:
        time.sleep(0.01)
    if not server.started:
        server.should_exit = True
        bridge.close()
        raise OSError(f"monitor bridge could not listen on {host}:{config.port}")
    port = server.servers[0].sockets[0].getsockname()[1] if config.port == 0 else config.port
    handle = BridgeHandle(bridge, server, thread, host, port, errors)
    log.info("monitor bridge at %s", handle.url)
    log_event("bridge_started", url=handle.url, topics=sorted(bridge.subscribed))
    return handle

