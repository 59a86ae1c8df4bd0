"""
Noise IK handshake (X25519, ChaCha20-Poly1305, BLAKE2s), one round trip.

Both statics are known up front: the initiator learns the responder's public key from
provisioning, the responder only accepts initiators whose static key it has authorized.
Handshake messages ride receiver index 0 followed by a type byte so they never collide
with transport datagrams.
"""
import logging
import queue
import secrets
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Collection, Optional, Protocol, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.hmac import HMAC

from constants import HANDSHAKE_RETRIES, HANDSHAKE_TIMEOUT_S
from errors import AuthenticationError, HandshakeTimeout, UnknownSession

from .keys import Entropy, KeyPair, generate_keypair
from .session import TunnelSession

__all__ = [
    "MSG_INIT", "MSG_RESPONSE", "INIT_LEN", "RESPONSE_LEN", "PendingHandshake",
    "Channel", "initiate", "respond", "complete", "handshake", "message_type",
    "channel_pair", "new_index",
]

log = logging.getLogger(__name__)

CONSTRUCTION = b"Noise_IKpsk2_25519_ChaChaPoly_BLAKE2s"
IDENTIFIER = b"fogmesh overlay v1"
ZERO_PSK = b"\x00" * 32
EMPTY_NONCE = b"\x00" * 12

MSG_INIT = 1
MSG_RESPONSE = 2

# receiver index 0 | type | sender index | ephemeral | static+tag | timestamp+tag
INIT_FORMAT = ">IBI32s48s28s"
# receiver index 0 | type | sender index | receiver index | ephemeral | empty+tag
RESPONSE_FORMAT = ">IBII32s16s"
INIT_LEN = struct.calcsize(INIT_FORMAT)
RESPONSE_LEN = struct.calcsize(RESPONSE_FORMAT)


def _hash(data: bytes) -> bytes:
    h = hashes.Hash(hashes.BLAKE2s(32))
    h.update(data)
    return h.finalize()


def _hmac(key: bytes, data: bytes) -> bytes:
    h = HMAC(key, hashes.BLAKE2s(32))
    h.update(data)
    return h.finalize()


def _kdf1(key: bytes, data: bytes) -> bytes:
    t0 = _hmac(key, data)
    return _hmac(t0, b"\x01")


def _kdf2(key: bytes, data: bytes) -> tuple[bytes, bytes]:
    t0 = _hmac(key, data)
    t1 = _hmac(t0, b"\x01")
    return t1, _hmac(t0, t1 + b"\x02")


def _kdf3(key: bytes, data: bytes) -> tuple[bytes, bytes, bytes]:
    t0 = _hmac(key, data)
    t1 = _hmac(t0, b"\x01")
    t2 = _hmac(t0, t1 + b"\x02")
    return t1, t2, _hmac(t0, t2 + b"\x03")


def _dh(private: bytes, public: bytes) -> bytes:
    try:
        return X25519PrivateKey.from_private_bytes(private).exchange(
            X25519PublicKey.from_public_bytes(public))
    except ValueError as e:
        # low-order point
        raise AuthenticationError(f"key agreement failed: {e}") from None


def _aead_encrypt(key: bytes, plaintext: bytes, ad: bytes) -> bytes:
    return ChaCha20Poly1305(key).encrypt(EMPTY_NONCE, plaintext, ad)


def _aead_decrypt(key: bytes, ciphertext: bytes, ad: bytes, what: str) -> bytes:
    try:
        return ChaCha20Poly1305(key).decrypt(EMPTY_NONCE, ciphertext, ad)
    except InvalidTag:
        raise AuthenticationError(f"cannot authenticate {what}") from None


_ts_lock = threading.Lock()
_last_ts = 0


def _timestamp() -> bytes:
    """TAI64N-style timestamp, strictly increasing within the process."""
    global _last_ts
    with _ts_lock:
        now = max(time.time_ns(), _last_ts + 1)
        _last_ts = now
    seconds, nanos = divmod(now, 1_000_000_000)
    return (seconds + 2**62 + 10).to_bytes(8, "big") + nanos.to_bytes(4, "big")


def new_index() -> int:
    """Random non-zero 32-bit session index."""
    return secrets.randbelow(2**32 - 1) + 1


def message_type(message: bytes) -> int:
    """Handshake type byte, or 0 for transport datagrams."""
    if len(message) < 5 or message[:4] != b"\x00\x00\x00\x00":
        return 0
    return message[4]


def _initial_state(responder_public: bytes) -> tuple[bytes, bytes]:
    ck = _hash(CONSTRUCTION)
    h = _hash(ck + IDENTIFIER)
    return ck, _hash(h + responder_public)


@dataclass
class PendingHandshake:
    """Initiator state between sending the init message and receiving the response."""

    local: KeyPair = field(repr=False)
    peer_public: bytes
    local_index: int
    ck: bytes = field(repr=False)
    h: bytes = field(repr=False)
    ephemeral: KeyPair = field(repr=False)
    started_at: float = field(default_factory=time.monotonic)


def initiate(local: KeyPair, peer_public: bytes, *, local_index: Optional[int] = None,
             entropy: Optional[Entropy] = None) -> tuple[PendingHandshake, bytes]:
    """Build the init message for `peer_public`."""
    local_index = local_index or new_index()
    ck, h = _initial_state(peer_public)
    eph = generate_keypair(entropy)
    ck = _kdf1(ck, eph.public)
    h = _hash(h + eph.public)
    ck, k = _kdf2(ck, _dh(eph.secret, peer_public))
    enc_static = _aead_encrypt(k, local.public, h)
    h = _hash(h + enc_static)
    ck, k = _kdf2(ck, _dh(local.secret, peer_public))
    enc_ts = _aead_encrypt(k, _timestamp(), h)
    h = _hash(h + enc_ts)

    message = struct.pack(INIT_FORMAT, 0, MSG_INIT, local_index, eph.public, enc_static, enc_ts)
    return PendingHandshake(local, peer_public, local_index, ck, h, eph), message


def respond(
    local: KeyPair,
    message: bytes,
    authorized: Union[Collection[bytes], Callable[[bytes], bool]],
    *,
    local_index: Optional[int] = None,
    last_timestamps: Optional[dict[bytes, bytes]] = None,
    entropy: Optional[Entropy] = None,
) -> tuple[TunnelSession, bytes]:
    """
    Consume an init message and produce the response plus the responder's session.

    Args:
        authorized: static keys allowed to connect (or a predicate over them)
        last_timestamps: per-peer newest init timestamp; replayed inits are refused
    """
    if len(message) != INIT_LEN:
        raise AuthenticationError("malformed handshake init")
    _, kind, sender_index, ei_pub, enc_static, enc_ts = struct.unpack(INIT_FORMAT, message)
    if kind != MSG_INIT:
        raise AuthenticationError("not a handshake init")

    ck, h = _initial_state(local.public)
    ck = _kdf1(ck, ei_pub)
    h = _hash(h + ei_pub)
    ck, k = _kdf2(ck, _dh(local.secret, ei_pub))
    si_pub = _aead_decrypt(k, enc_static, h, "initiator static key")
    allowed = authorized(si_pub) if callable(authorized) else si_pub in authorized
    if not allowed:
        raise AuthenticationError("initiator static key is not authorized")
    h = _hash(h + enc_static)
    ck, k = _kdf2(ck, _dh(local.secret, si_pub))
    timestamp = _aead_decrypt(k, enc_ts, h, "handshake timestamp")
    if last_timestamps is not None:
        if last_timestamps.get(si_pub, b"") >= timestamp:
            raise AuthenticationError("replayed handshake init")
        last_timestamps[si_pub] = timestamp
    h = _hash(h + enc_ts)

    eph = generate_keypair(entropy)
    ck = _kdf1(ck, eph.public)
    h = _hash(h + eph.public)
    ck = _kdf1(ck, _dh(eph.secret, ei_pub))
    ck = _kdf1(ck, _dh(eph.secret, si_pub))
    ck, tau, k = _kdf3(ck, ZERO_PSK)
    h = _hash(h + tau)
    enc_nothing = _aead_encrypt(k, b"", h)
    recv_key, send_key = _kdf2(ck, b"")

    local_index = local_index or new_index()
    session = TunnelSession(peer_public=si_pub, send_key=send_key, recv_key=recv_key,
                            local_index=local_index, peer_index=sender_index)
    reply = struct.pack(RESPONSE_FORMAT, 0, MSG_RESPONSE, local_index, sender_index,
                        eph.public, enc_nothing)
    return session, reply


def complete(pending: PendingHandshake, message: bytes) -> TunnelSession:
    """Consume the response and derive the initiator's session."""
    if len(message) != RESPONSE_LEN:
        raise AuthenticationError("malformed handshake response")
    _, kind, sender_index, receiver_index, er_pub, enc_nothing = struct.unpack(
        RESPONSE_FORMAT, message)
    if kind != MSG_RESPONSE:
        raise AuthenticationError("not a handshake response")
    if receiver_index != pending.local_index:
        raise UnknownSession(f"response for index {receiver_index:#010x}")

    ck = _kdf1(pending.ck, er_pub)
    h = _hash(pending.h + er_pub)
    ck = _kdf1(ck, _dh(pending.ephemeral.secret, er_pub))
    ck = _kdf1(ck, _dh(pending.local.secret, er_pub))
    ck, tau, k = _kdf3(ck, ZERO_PSK)
    h = _hash(h + tau)
    _aead_decrypt(k, enc_nothing, h, "handshake response")
    send_key, recv_key = _kdf2(ck, b"")
    return TunnelSession(peer_public=pending.peer_public, send_key=send_key, recv_key=recv_key,
                         local_index=pending.local_index, peer_index=sender_index)


class Channel(Protocol):
    def send(self, data: bytes) -> None: ...

    def recv(self, timeout: float) -> Optional[bytes]: ...


class _QueueChannel:
    def __init__(self, inbox: "queue.Queue[bytes]", outbox: "queue.Queue[bytes]"):
        self._inbox = inbox
        self._outbox = outbox
        self.online = True

    def send(self, data: bytes) -> None:
        if self.online:
            self._outbox.put(bytes(data))

    def recv(self, timeout: float) -> Optional[bytes]:
        try:
            return self._inbox.get(timeout=timeout)
        except queue.Empty:
            return None


def channel_pair() -> tuple[_QueueChannel, _QueueChannel]:
    """Two connected in-process channels."""
    a, b = queue.Queue(), queue.Queue()
    return _QueueChannel(a, b), _QueueChannel(b, a)


def handshake(
    local: KeyPair,
    peer_public: bytes,
    role: str,
    channel: Channel,
    *,
    timeout: float = HANDSHAKE_TIMEOUT_S,
    retries: int = HANDSHAKE_RETRIES,
    entropy: Optional[Entropy] = None,
) -> TunnelSession:
    """
    Run one side of the handshake over a blocking message channel.

    A responder that cannot authenticate the init raises AuthenticationError and sends
    nothing back, so an unauthenticated sender learns nothing. On the initiator side a
    responder holding a different key than `peer_public` (or not authorizing ours) is
    therefore indistinguishable from a lost peer: both end in HandshakeTimeout.
    A reply that arrives but fails to authenticate raises AuthenticationError.
    """
    if role == "initiator":
        for attempt in range(1, retries + 1):
            pending, message = initiate(local, peer_public, entropy=entropy)
            channel.send(message)
            reply = channel.recv(timeout)
            if reply is None:
                log.debug("handshake attempt %d/%d timed out", attempt, retries)
                continue
            return complete(pending, reply)
        raise HandshakeTimeout(f"no handshake response after {retries} attempts "
                               "(peer unreachable, or it refused our key)")

    if role == "responder":
        message = channel.recv(timeout * retries)
        if message is None:
            raise HandshakeTimeout("no handshake init received")
        session, reply = respond(local, message, {peer_public}, entropy=entropy)
        channel.send(reply)
        return session

    raise ValueError(f"role must be 'initiator' or 'responder', not {role!r}")
