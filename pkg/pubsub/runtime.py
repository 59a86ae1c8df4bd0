"""
Topic pub/sub runtime for one machine.

Local subscribers are served directly through their node's dispatcher. Remote subscribers
are learned from beacons exchanged over overlay sessions and receive fragmented, sealed
envelopes. Acked subscriptions answer each complete message with a receipt; the publisher
retries unacknowledged messages and finally reports DeliveryFailed.
"""
import json
import logging
import random
import threading
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from constants import (ACK_RETRIES, ACK_TIMEOUT_S, ANNOUNCE_INTERVAL_S, CONTROL_PREFIX,
                       MAX_MESSAGE_BYTES, REASSEMBLY_TIMEOUT_S)
from core.clock import Clock, MonotonicClock
from errors import (DeliveryFailed, DuplicateSubscription, MalformedEnvelope, MessageTooLarge,
                    NotAdvertised, OverlayError, PubSubError)
from overlay.endpoint import OverlayEndpoint

from .dispatch import Dispatcher, make_dispatcher
from .envelope import (KIND_ACK, KIND_BEACON, KIND_DATA, Envelope, check_topic, make_message_id,
                       publisher_of)
from .fragment import Reassembler, fragment
from .peers import PeerTable

__all__ = ["PubSubRuntime", "Message", "Subscription", "Advertisement", "BEST_EFFORT", "ACKED",
           "BEACON_TOPIC"]

log = logging.getLogger(__name__)

BEST_EFFORT = "best-effort"
ACKED = "acked"
BEACON_TOPIC = f"{CONTROL_PREFIX}/beacon"
_BEACON_PUBLISHER = 0xFFFFFFFF
_RECENT_IDS = 1024


@dataclass(frozen=True)
class Message:
    topic: str
    payload: bytes
    seq: int
    publish_instant: float
    message_id: int
    source: str
    peer: Optional[bytes] = None


Callback = Callable[[Message], None]


@dataclass
class Subscription:
    node: str
    topic: str
    callback: Callback
    mode: str = BEST_EFFORT


@dataclass
class Advertisement:
    node: str
    topic: str
    publisher_id: int
    last_seq: int = 0


@dataclass
class _PendingAck:
    peer: bytes
    topic: str
    message_id: int
    datagrams: list[bytes]
    deadline: float
    attempts: int = 0
    done: bool = False
    failed: bool = False


@dataclass
class _Node:
    name: str
    dispatcher: Dispatcher
    subs: dict[str, Subscription] = field(default_factory=dict)
    ads: dict[str, Advertisement] = field(default_factory=dict)


class PubSubRuntime:
    """
    Usage:
        rt = PubSubRuntime("robot", endpoint, clock=clock)
        rt.add_node("camera")
        rt.advertise("camera", "/camera")
        rt.subscribe("viewer", "/camera", on_frame)
        rt.publish("camera", "/camera", frame_bytes)
    """

    def __init__(
        self,
        machine: str,
        endpoint: Optional[OverlayEndpoint] = None,
        *,
        clock: Optional[Clock] = None,
        dispatch: str = "inline",
        announce_interval: float = ANNOUNCE_INTERVAL_S,
        ack_timeout: float = ACK_TIMEOUT_S,
        ack_retries: int = ACK_RETRIES,
        reassembly_timeout: float = REASSEMBLY_TIMEOUT_S,
        max_fragment: Optional[int] = None,
        rng: Optional[random.Random] = None,
    ):
        self.machine = machine
        self.endpoint = endpoint
        self.clock = clock or MonotonicClock()
        self.dispatch = dispatch
        self.announce_interval = announce_interval
        self.ack_timeout = ack_timeout
        self.ack_retries = ack_retries
        self.max_fragment = max_fragment
        self.peers = PeerTable(announce_interval)
        self.reassembler = Reassembler(reassembly_timeout)
        self.stats: Counter = Counter()
        self.failures: list[DeliveryFailed] = []
        self.on_delivery_failed: Optional[Callable[[DeliveryFailed], None]] = None
        self._rng = rng or random.Random()
        self._lock = threading.RLock()
        self._nodes: dict[str, _Node] = {}
        self._pending: dict[tuple[bytes, int], _PendingAck] = {}
        self._last_seq: dict[tuple, int] = {}
        self._recent: dict[tuple, deque] = {}
        self._beacon_seq = 0
        self._last_announce = float("-inf")
        self._timer: Optional[threading.Thread] = None
        self._stop = threading.Event()
        if endpoint is not None:
            endpoint.set_handler(self._on_plaintext)
            endpoint.on_session(self._on_session)
            for peer in endpoint.peers():
                self.peers.register(peer, self.clock.now())

    # --- registration -----------------------------------------------------

    def add_node(self, node: str) -> None:
        with self._lock:
            if node not in self._nodes:
                self._nodes[node] = _Node(node, make_dispatcher(node, self.dispatch))

    def remove_node(self, node: str) -> None:
        with self._lock:
            entry = self._nodes.pop(node, None)
        if entry is not None:
            entry.dispatcher.close()
            self.announce()

    def nodes(self) -> list[str]:
        with self._lock:
            return list(self._nodes)

    def _node(self, node: str) -> _Node:
        entry = self._nodes.get(node)
        if entry is None:
            raise PubSubError(f"node {node!r} is not running on {self.machine}")
        return entry

    def advertise(self, node: str, topic: str) -> Advertisement:
        check_topic(topic)
        with self._lock:
            entry = self._node(node)
            ad = entry.ads.get(topic)
            if ad is None:
                ad = entry.ads[topic] = Advertisement(node, topic, self._rng.getrandbits(32) or 1)
            return ad

    def subscribe(self, node: str, topic: str, callback: Callback,
                  mode: str = BEST_EFFORT) -> Subscription:
        check_topic(topic)
        if mode not in (BEST_EFFORT, ACKED):
            raise PubSubError(f"unknown delivery mode {mode!r}")
        with self._lock:
            entry = self._node(node)
            if topic in entry.subs:
                raise DuplicateSubscription(f"{node} already subscribes to {topic}")
            sub = entry.subs[topic] = Subscription(node, topic, callback, mode)
        self.announce()
        return sub

    def unsubscribe(self, node: str, topic: str) -> None:
        with self._lock:
            self._node(node).subs.pop(topic, None)
        self.announce()

    def local_topics(self) -> dict[str, str]:
        """Subscribed topics with the strongest mode any local node asked for."""
        with self._lock:
            topics: dict[str, str] = {}
            for entry in self._nodes.values():
                for topic, sub in entry.subs.items():
                    if topics.get(topic) != ACKED:
                        topics[topic] = sub.mode
            return topics

    def advertised_topics(self) -> set[str]:
        with self._lock:
            return {t for entry in self._nodes.values() for t in entry.ads}

    def _subscribers(self, topic: str) -> list[tuple[Subscription, Dispatcher]]:
        with self._lock:
            return [(e.subs[topic], e.dispatcher) for e in self._nodes.values() if topic in e.subs]

    # --- publishing -------------------------------------------------------

    def publish(
        self,
        node: str,
        topic: str,
        payload: bytes,
        *,
        instant: Optional[float] = None,
        scope: str = "all",
        to: Optional[Iterable[bytes]] = None,
        acked: Optional[bool] = None,
        wait: bool = False,
        timeout: Optional[float] = None,
    ) -> int:
        """
        Publish one message; returns its sequence number.

        Args:
            scope: "all" or "local" (local subscribers only)
            to: explicit overlay peers instead of the peer table's subscribers
            acked: force (True) or suppress (False) receipts; default follows subscriber mode
            wait: block until every receipt arrives, raising DeliveryFailed otherwise
        """
        payload = bytes(payload)
        if len(payload) > MAX_MESSAGE_BYTES:
            raise MessageTooLarge(f"{len(payload)} bytes exceeds {MAX_MESSAGE_BYTES}")
        with self._lock:
            ad = self._node(node).ads.get(topic)
            if ad is None:
                raise NotAdvertised(f"{node} has not advertised {topic}")
            ad.last_seq += 1
            seq = ad.last_seq
        message_id = make_message_id(ad.publisher_id, seq)
        now = self.clock.now()
        instant = now if instant is None else instant
        self.stats["published"] += 1

        message = Message(topic, payload, seq, instant, message_id, self.machine)
        for sub, dispatcher in self._subscribers(topic):
            dispatcher.submit(lambda s=sub: s.callback(message))
            self.stats["delivered_local"] += 1

        if scope == "local" or self.endpoint is None:
            return seq
        if to is not None:
            targets = {bytes(pk): (ACKED if acked else BEST_EFFORT) for pk in to}
        else:
            targets = self.peers.subscribers(topic, now)
            if acked is not None:
                targets = {pk: (ACKED if acked else BEST_EFFORT) for pk in targets}
        if not targets:
            return seq

        datagrams = [env.encode() for env in fragment(
            topic, payload, seq=seq, message_id=message_id, publish_instant=instant,
            max_fragment=self.max_fragment)]
        pending = []
        for peer, mode in targets.items():
            if mode == ACKED:
                p = _PendingAck(peer, topic, message_id, datagrams, now + self.ack_timeout)
                with self._lock:
                    self._pending[(peer, message_id)] = p
                pending.append(p)
            self._send_all(peer, datagrams)
        self.stats["fragments_sent"] += len(datagrams) * len(targets)

        if wait and pending:
            limit = timeout if timeout is not None else self.ack_timeout * (self.ack_retries + 2)
            self.wait_until(lambda: all(p.done or p.failed for p in pending), limit)
            missing = [p for p in pending if not p.done]
            if missing:
                raise DeliveryFailed(f"{topic} seq {seq}: no receipt from "
                                     f"{', '.join(self.peers.machine_of(p.peer) or '?' for p in missing)}")
        return seq

    def _send_all(self, peer: bytes, datagrams: list[bytes]) -> None:
        for data in datagrams:
            try:
                self.endpoint.send(peer, data)
            except OverlayError as e:
                self.stats["send_errors"] += 1
                log.debug("%s: send to %s failed: %s", self.machine, self.peers.machine_of(peer), e)
                return

    # --- discovery ----------------------------------------------------------

    def beacon(self) -> dict:
        return {"machine": self.machine, "nodes": self.nodes(), "topics": self.local_topics()}

    def announce(self, peers: Optional[Iterable[bytes]] = None) -> bytes:
        """Send the beacon to every session peer (or `peers`). Returns the beacon payload."""
        payload = json.dumps(self.beacon(), sort_keys=True).encode()
        self._last_announce = self.clock.now()
        if self.endpoint is None:
            return payload
        with self._lock:
            self._beacon_seq += 1
            seq = self._beacon_seq
        datagrams = [env.encode() for env in fragment(
            BEACON_TOPIC, payload, seq=seq, message_id=make_message_id(_BEACON_PUBLISHER, seq),
            publish_instant=self._last_announce, kind=KIND_BEACON)]
        for peer in list(peers if peers is not None else self.endpoint.peers()):
            self._send_all(peer, datagrams)
        self.stats["beacons_sent"] += 1
        return payload

    def _on_session(self, peer: bytes) -> None:
        self.peers.register(peer, self.clock.now())
        self.announce([peer])

    # --- receive path -------------------------------------------------------

    def _on_plaintext(self, peer: bytes, data: bytes) -> None:
        try:
            env = Envelope.decode(data)
        except MalformedEnvelope as e:
            self.stats["malformed"] += 1
            log.debug("%s: malformed envelope: %s", self.machine, e)
            return
        now = self.clock.now()
        if env.kind == KIND_ACK:
            with self._lock:
                p = self._pending.pop((peer, env.message_id), None)
            if p is not None:
                p.done = True
                self.stats["acks_received"] += 1
            return
        try:
            payload = self.reassembler.add(peer, env, now)
        except MalformedEnvelope:
            self.stats["malformed"] += 1
            return
        if payload is None:
            return
        if env.kind == KIND_BEACON:
            try:
                beacon = json.loads(payload)
            except ValueError:
                self.stats["malformed"] += 1
                return
            if self.peers.update(peer, beacon, now):
                self.stats["beacons_received"] += 1
            return
        self._deliver_remote(peer, env, payload)

    def _deliver_remote(self, peer: bytes, env: Envelope, payload: bytes) -> None:
        subs = self._subscribers(env.topic)
        wants_ack = any(sub.mode == ACKED for sub, _ in subs)
        key = (peer, publisher_of(env.message_id), env.topic)
        with self._lock:
            last = self._last_seq.get(key, 0)
            recent = self._recent.setdefault(key, deque(maxlen=_RECENT_IDS))
            if env.seq <= last:
                seen = env.message_id in recent
                fresh = False
            else:
                self._last_seq[key] = env.seq
                recent.append(env.message_id)
                seen = fresh = True
        if not fresh:
            self.stats["duplicates" if seen else "out_of_order"] += 1
        else:
            message = Message(env.topic, payload, env.seq, env.publish_instant, env.message_id,
                              self.peers.machine_of(peer), peer)
            for sub, dispatcher in subs:
                dispatcher.submit(lambda s=sub: s.callback(message))
            self.stats["delivered_remote"] += 1
        if wants_ack and seen:
            ack = Envelope(topic=env.topic, seq=env.seq, publish_instant=self.clock.now(),
                           message_id=env.message_id, kind=KIND_ACK)
            self._send_all(peer, [ack.encode()])
            self.stats["acks_sent"] += 1

    # --- timers -----------------------------------------------------------

    def tick(self) -> None:
        """Announce when due, expire partial messages, retry or fail unacked messages."""
        now = self.clock.now()
        if self.endpoint is not None and now - self._last_announce >= self.announce_interval:
            self.announce()
        dropped = self.reassembler.expire(now)
        if dropped:
            self.stats["reassembly_dropped"] += dropped
        resend, failed = [], []
        with self._lock:
            for key, p in list(self._pending.items()):
                if p.done or now < p.deadline:
                    continue
                if p.attempts < self.ack_retries:
                    p.attempts += 1
                    p.deadline = now + self.ack_timeout
                    resend.append(p)
                else:
                    p.failed = True
                    del self._pending[key]
                    failed.append(p)
        for p in resend:
            self.stats["retries"] += 1
            self._send_all(p.peer, p.datagrams)
        for p in failed:
            err = DeliveryFailed(f"{p.topic} message {p.message_id:#x} unacknowledged by "
                                 f"{self.peers.machine_of(p.peer) or 'peer'} after {p.attempts} retries")
            self.stats["delivery_failed"] += 1
            self.failures.append(err)
            log.warning("%s: %s", self.machine, err)
            if self.on_delivery_failed is not None:
                self.on_delivery_failed(err)

    def start(self, period: float = 0.05) -> None:
        """Drive tick() from a background thread (wall-clock deployments)."""
        if self._timer is not None:
            return
        self._stop.clear()

        def loop():
            while not self._stop.wait(period):
                try:
                    self.tick()
                except Exception:
                    log.exception("%s: tick failed", self.machine)

        self._timer = threading.Thread(target=loop, name=f"fog-pubsub-{self.machine}", daemon=True)
        self._timer.start()

    def wait_until(self, predicate: Callable[[], bool], timeout: float) -> bool:
        if predicate():
            return True
        if self.endpoint is not None:
            return self.endpoint.transport.wait_until(predicate, timeout)
        return False

    def wait_for_remote_topics(self, topics: Iterable[str], timeout: float) -> bool:
        wanted = set(topics)
        return self.wait_until(lambda: wanted <= self.peers.remote_topics(self.clock.now()), timeout)

    def metrics(self) -> dict[str, int]:
        out = dict(self.stats)
        out["reassembly_pending"] = self.reassembler.pending
        out["acks_pending"] = len(self._pending)
        return out

    def close(self) -> None:
        self._stop.set()
        if self._timer is not None:
            self._timer.join(timeout=1.0)
            self._timer = None
        with self._lock:
            nodes = list(self._nodes.values())
            self._nodes.clear()
        for entry in nodes:
            entry.dispatcher.close()
