"""
Datagram transports under the overlay.

UdpTransport: real sockets, with optional per-destination link shaping through a delay line.
MemoryNetwork: in-process datagrams on a simulated clock, for tests and benchmarks.
Both expose the same small surface: send, set_receiver, wait_until, address, close.
"""
import heapq
import itertools
import logging
import socket
import threading
import time
from typing import Callable, Iterable, Optional, Protocol

from core.clock import SimulatedClock
from provision.link import Link, LinkModel

__all__ = ["Address", "Receiver", "Transport", "UdpTransport", "MemoryNetwork",
           "MemoryTransport"]

log = logging.getLogger(__name__)

# receive callbacks may run on dispatcher threads after notify(), so waits also poll
_POLL_S = 0.005

Address = tuple
Receiver = Callable[[bytes, Address], None]
Tap = Callable[[Address, Address, bytes], None]


class Transport(Protocol):
    address: Address

    def send(self, data: bytes, dest: Address) -> None: ...

    def set_receiver(self, receiver: Receiver) -> None: ...

    def wait_until(self, predicate: Callable[[], bool], timeout: float) -> bool: ...

    def close(self) -> None: ...


class _DelayLine:
    """Releases datagrams at their computed delivery instant (monotonic time)."""

    def __init__(self, sendto: Callable[[bytes, Address], None]):
        self._sendto = sendto
        self._heap: list = []
        self._seq = itertools.count()
        self._cond = threading.Condition()
        self._closed = False
        self._thread = threading.Thread(target=self._run, name="fog-delayline", daemon=True)
        self._thread.start()

    def schedule(self, due: float, data: bytes, dest: Address) -> None:
        with self._cond:
            heapq.heappush(self._heap, (due, next(self._seq), data, dest))
            self._cond.notify()

    def _run(self) -> None:
        while True:
            with self._cond:
                while not self._closed and (not self._heap or self._heap[0][0] > time.monotonic()):
                    wait = self._heap[0][0] - time.monotonic() if self._heap else None
                    self._cond.wait(wait)
                if self._closed:
                    return
                _, _, data, dest = heapq.heappop(self._heap)
            self._sendto(data, dest)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify()
        self._thread.join(timeout=1.0)


class UdpTransport:
    """
    UDP socket with a reader thread.

    Usage:
        t = UdpTransport()                 # 127.0.0.1, ephemeral port
        t.shape(peer_addr, LinkModel(10e6, 6.1))
        t.set_receiver(lambda data, src: ...)
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._sock.settimeout(0.2)
        self.address: Address = self._sock.getsockname()
        self._receiver: Optional[Receiver] = None
        self._links: dict[Address, Link] = {}
        self._default_link: Optional[Link] = None
        self._taps: list[Tap] = []
        self._delay: Optional[_DelayLine] = None
        self._cond = threading.Condition()
        self._closed = False
        self.bytes_sent = 0
        self._reader = threading.Thread(target=self._read_loop, name=f"fog-udp-{self.address[1]}",
                                        daemon=True)
        self._reader.start()

    def shape(self, dest: Optional[Address], model: LinkModel, seed: int = 0) -> None:
        """Shape sends to `dest`, or every destination without its own link when dest is None."""
        if dest is None:
            self._default_link = Link(model, seed)
        else:
            self._links[tuple(dest)] = Link(model, seed)
        if self._delay is None:
            self._delay = _DelayLine(self._sendto)

    def add_tap(self, tap: Tap) -> None:
        self._taps.append(tap)

    def set_receiver(self, receiver: Receiver) -> None:
        self._receiver = receiver

    def send(self, data: bytes, dest: Address) -> None:
        dest = tuple(dest)
        for tap in self._taps:
            tap(self.address, dest, data)
        link = self._links.get(dest, self._default_link)
        if link is None:
            self._sendto(data, dest)
            return
        due = link.transmit(len(data), time.monotonic())
        if due is not None:
            self._delay.schedule(due, data, dest)

    def _sendto(self, data: bytes, dest: Address) -> None:
        try:
            self._sock.sendto(data, dest)
            self.bytes_sent += len(data)
        except OSError as e:
            if not self._closed:
                log.debug("sendto %s failed: %s", dest, e)

    def _read_loop(self) -> None:
        while not self._closed:
            try:
                data, src = self._sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            receiver = self._receiver
            if receiver is not None:
                try:
                    receiver(data, src)
                except Exception:
                    log.exception("receiver failed on datagram from %s", src)
            self.notify()

    def notify(self) -> None:
        with self._cond:
            self._cond.notify_all()

    def wait_until(self, predicate: Callable[[], bool], timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        with self._cond:
            while not predicate():
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._cond.wait(min(remaining, _POLL_S))
        return True

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._delay is not None:
            self._delay.close()
        self._sock.close()
        self._reader.join(timeout=1.0)


class MemoryNetwork:
    """
    Event-driven in-process network on a simulated clock.

    Datagrams are queued with their delivery instant and handed over by pump()/run_until();
    nothing is delivered inline from send(). Links, taps and an adversarial filter can
    be attached per direction.

    Usage:
        net = MemoryNetwork()
        a, b = net.attach("robot"), net.attach("cloud")
        net.set_link(a.address, b.address, LinkModel(10e6, 6.1))
        a.send(b"hi", b.address)
        net.pump()
    """

    def __init__(self, clock: Optional[SimulatedClock] = None, seed: int = 0):
        self.clock = clock or SimulatedClock()
        self.seed = seed
        self._heap: list = []
        self._seq = itertools.count()
        self._ids = itertools.count(1)
        self._endpoints: dict[Address, "MemoryTransport"] = {}
        self._links: dict[tuple[Address, Address], Link] = {}
        self._taps: list[Tap] = []
        self._filter: Optional[Callable[[Address, Address, bytes], Iterable[bytes]]] = None
        self._lock = threading.RLock()
        self._in_flight = 0
        self.delivered = 0
        self.undeliverable = 0

    def attach(self, name: str = "") -> "MemoryTransport":
        address = ("mem", next(self._ids), name)
        transport = MemoryTransport(self, address)
        with self._lock:
            self._endpoints[address] = transport
        return transport

    def detach(self, address: Address) -> None:
        with self._lock:
            self._endpoints.pop(tuple(address), None)

    def set_link(self, a: Address, b: Address, model: LinkModel, *, both: bool = True) -> None:
        with self._lock:
            self._links[(tuple(a), tuple(b))] = Link(model, seed=self.seed)
            if both:
                self._links[(tuple(b), tuple(a))] = Link(model, seed=self.seed + 1)

    def link(self, src: Address, dst: Address) -> Optional[Link]:
        return self._links.get((tuple(src), tuple(dst)))

    def add_tap(self, tap: Tap) -> None:
        self._taps.append(tap)

    def set_filter(self, fn: Optional[Callable[[Address, Address, bytes], Iterable[bytes]]]) -> None:
        """fn(src, dst, data) returns the datagrams that actually go out (drop, dup, tamper)."""
        self._filter = fn

    def call_at(self, instant: float, fn: Callable[[], None]) -> None:
        with self._lock:
            heapq.heappush(self._heap, (instant, next(self._seq), None, None, fn))

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        self.call_at(self.clock.now() + max(0.0, delay), fn)

    def _send(self, src: Address, dst: Address, data: bytes) -> None:
        data = bytes(data)
        for tap in self._taps:
            tap(src, dst, data)
        outgoing = self._filter(src, dst, data) if self._filter else (data,)
        now = self.clock.now()
        with self._lock:
            link = self._links.get((src, dst))
            for out in outgoing:
                due = now if link is None else link.transmit(len(out), now)
                if due is None:
                    continue
                heapq.heappush(self._heap, (due, next(self._seq), dst, src, out))
                self._in_flight += 1

    @property
    def idle(self) -> bool:
        return self._in_flight == 0

    def next_due(self) -> Optional[float]:
        with self._lock:
            return self._heap[0][0] if self._heap else None

    def step(self) -> bool:
        """Process the earliest event. False when nothing is queued."""
        with self._lock:
            if not self._heap:
                return False
            due, _, dst, src, item = heapq.heappop(self._heap)
            if dst is not None:
                self._in_flight -= 1
                target = self._endpoints.get(dst)
        self.clock.set(due)
        if dst is None:
            item()
            return True
        if target is None:
            self.undeliverable += 1
            return True
        self.delivered += 1
        target._deliver(item, src)
        return True

    def run_until(self, instant: float) -> int:
        """Process every event due at or before `instant`, then move the clock there."""
        count = 0
        while True:
            due = self.next_due()
            if due is None or due > instant:
                break
            self.step()
            count += 1
        self.clock.set(instant)
        return count

    def pump(self, limit: int = 10_000_000) -> int:
        """Run until no datagram is in flight. Timers due before that point fire too."""
        count = 0
        while self._in_flight and count < limit:
            if not self.step():
                break
            count += 1
        return count


class MemoryTransport:
    def __init__(self, network: MemoryNetwork, address: Address):
        self.network = network
        self.address = address
        self._receiver: Optional[Receiver] = None
        self.closed = False

    def set_receiver(self, receiver: Receiver) -> None:
        self._receiver = receiver

    def send(self, data: bytes, dest: Address) -> None:
        if not self.closed:
            self.network._send(self.address, tuple(dest), data)

    def _deliver(self, data: bytes, src: Address) -> None:
        if self.closed or self._receiver is None:
            return
        try:
            self._receiver(data, src)
        except Exception:
            log.exception("receiver failed on datagram from %s", src)

    def wait_until(self, predicate: Callable[[], bool], timeout: float) -> bool:
        """Drive the network until predicate holds or `timeout` simulated seconds pass."""
        deadline = self.network.clock.now() + timeout
        while not predicate():
            due = self.network.next_due()
            if due is None or due > deadline:
                self.network.clock.set(deadline)
                return predicate()
            self.network.step()
        return True

    def close(self) -> None:
        self.closed = True
        self.network.detach(self.address)
