"""
Overlay endpoint: one static key, one transport, many peer sessions.
Handshake messages are answered on the receive path; transport datagrams are opened and
handed to the registered handler as (peer public key, plaintext).
"""
import logging
import threading
from collections import Counter
from typing import Callable, Iterable, Optional

from constants import HANDSHAKE_RETRIES, HANDSHAKE_TIMEOUT_S
from errors import AuthenticationError, HandshakeTimeout, OverlayError, UnknownSession

from .keys import Entropy, KeyPair, b64
from .noise import MSG_INIT, MSG_RESPONSE, PendingHandshake, complete, initiate, message_type, respond
from .session import TunnelSession, peek_index
from .transport import Address, Transport

__all__ = ["OverlayEndpoint"]

log = logging.getLogger(__name__)

Handler = Callable[[bytes, bytes], None]


class OverlayEndpoint:
    """
    Usage:
        ep = OverlayEndpoint(keys, UdpTransport())
        ep.authorize(peer_public)               # responder side
        ep.connect(peer_public, peer_address)   # initiator side
        ep.set_handler(lambda peer, data: ...)
        ep.send(peer_public, b"...")
    """

    def __init__(self, keypair: KeyPair, transport: Transport, *, name: str = "",
                 entropy: Optional[Entropy] = None):
        self.keypair = keypair
        self.transport = transport
        self.name = name or b64(keypair.public)[:8]
        self._entropy = entropy
        self._lock = threading.RLock()
        self._authorized: set[bytes] = set()
        self._addresses: dict[bytes, Address] = {}
        self._sessions: dict[int, TunnelSession] = {}
        self._current: dict[bytes, TunnelSession] = {}
        self._previous: dict[bytes, TunnelSession] = {}
        self._pending: dict[int, PendingHandshake] = {}
        self._last_ts: dict[bytes, bytes] = {}
        self._handler: Optional[Handler] = None
        self._session_listeners: list[Callable[[bytes], None]] = []
        self.stats: Counter = Counter()
        transport.set_receiver(self._on_datagram)

    @property
    def address(self) -> Address:
        return self.transport.address

    def authorize(self, peer_public: bytes, address: Optional[Address] = None) -> None:
        with self._lock:
            self._authorized.add(bytes(peer_public))
            if address is not None:
                self._addresses[bytes(peer_public)] = tuple(address)

    def revoke(self, peer_public: bytes) -> None:
        with self._lock:
            self._authorized.discard(peer_public)
            self._drop_sessions(peer_public)

    def set_handler(self, handler: Optional[Handler]) -> None:
        self._handler = handler

    def on_session(self, listener: Callable[[bytes], None]) -> None:
        """Called with the peer public key whenever a session (re)establishes."""
        self._session_listeners.append(listener)

    def session_for(self, peer_public: bytes) -> Optional[TunnelSession]:
        with self._lock:
            return self._current.get(peer_public)

    def peers(self) -> list[bytes]:
        with self._lock:
            return list(self._current)

    def connect(self, peer_public: bytes, address: Address, *,
                timeout: float = HANDSHAKE_TIMEOUT_S,
                retries: int = HANDSHAKE_RETRIES) -> TunnelSession:
        """Initiate a handshake and block until the session is up."""
        self.authorize(peer_public, address)
        for attempt in range(1, retries + 1):
            pending, message = initiate(self.keypair, peer_public, entropy=self._entropy)
            with self._lock:
                self._pending[pending.local_index] = pending
            self.transport.send(message, tuple(address))
            index = pending.local_index
            if self.transport.wait_until(lambda: index in self._sessions, timeout):
                return self._sessions[index]
            with self._lock:
                self._pending.pop(index, None)
            log.info("%s: handshake with %s timed out (attempt %d/%d)",
                     self.name, b64(peer_public)[:8], attempt, retries)
        raise HandshakeTimeout(f"no response from {address} after {retries} attempts "
                               "(peer unreachable, or it refused our key)")

    def send(self, peer_public: bytes, plaintext: bytes) -> int:
        """Seal and send one datagram; returns its wire size."""
        with self._lock:
            session = self._current.get(peer_public)
        if session is None:
            raise UnknownSession(f"no session with {b64(peer_public)[:8]}")
        datagram = session.seal(plaintext)
        self.transport.send(datagram, session.peer_endpoint)
        self.stats["sent"] += 1
        return len(datagram)

    def broadcast(self, plaintext: bytes, peers: Optional[Iterable[bytes]] = None) -> int:
        sent = 0
        for peer in list(peers if peers is not None else self.peers()):
            try:
                self.send(peer, plaintext)
                sent += 1
            except OverlayError as e:
                log.debug("%s: send to %s failed: %s", self.name, b64(peer)[:8], e)
        return sent

    def close_session(self, peer_public: bytes) -> None:
        with self._lock:
            self._drop_sessions(peer_public)

    def close(self) -> None:
        with self._lock:
            self._sessions.clear()
            self._current.clear()
            self._previous.clear()
            self._pending.clear()
        self.transport.close()

    # --- receive path -----------------------------------------------------

    def _drop_sessions(self, peer_public: bytes) -> None:
        for table in (self._current, self._previous):
            session = table.pop(peer_public, None)
            if session is not None:
                self._sessions.pop(session.local_index, None)

    def _install(self, session: TunnelSession, address: Address) -> None:
        session.peer_endpoint = tuple(address)
        with self._lock:
            peer = session.peer_public
            stale = self._previous.pop(peer, None)
            if stale is not None:
                self._sessions.pop(stale.local_index, None)
            current = self._current.get(peer)
            if current is not None:
                self._previous[peer] = current
            self._current[peer] = session
            self._sessions[session.local_index] = session
            self._addresses[peer] = tuple(address)
        self.stats["sessions"] += 1
        for listener in list(self._session_listeners):
            listener(peer)

    def _on_datagram(self, data: bytes, src: Address) -> None:
        kind = message_type(data)
        try:
            if kind == MSG_INIT:
                self._on_init(data, src)
            elif kind == MSG_RESPONSE:
                self._on_response(data, src)
            else:
                self._on_transport(data)
        except OverlayError as e:
            self.stats[type(e).__name__] += 1
            log.debug("%s: dropped datagram from %s: %s", self.name, src, e)

    def _on_init(self, data: bytes, src: Address) -> None:
        with self._lock:
            authorized = set(self._authorized)
        session, reply = respond(self.keypair, data, authorized,
                                 last_timestamps=self._last_ts, entropy=self._entropy)
        self.transport.send(reply, tuple(src))
        self._install(session, src)
        log.debug("%s: accepted handshake from %s", self.name, b64(session.peer_public)[:8])

    def _on_response(self, data: bytes, src: Address) -> None:
        receiver_index = int.from_bytes(data[9:13], "big")
        with self._lock:
            pending = self._pending.pop(receiver_index, None)
        if pending is None:
            raise UnknownSession(f"no pending handshake {receiver_index:#010x}")
        try:
            session = complete(pending, data)
        except AuthenticationError:
            with self._lock:
                self._pending[receiver_index] = pending
            raise
        self._install(session, src)

    def _on_transport(self, data: bytes) -> None:
        with self._lock:
            session = self._sessions.get(peek_index(data))
        if session is None:
            raise UnknownSession("datagram for unknown session index")
        plaintext = session.open(data)
        self.stats["received"] += 1
        handler = self._handler
        if handler is not None:
            handler(session.peer_public, plaintext)
