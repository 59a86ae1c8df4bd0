"""
Transport sessions: sealing and opening overlay datagrams.

Datagram layout (big-endian):
    receiver index (4) | counter (8) | ciphertext | tag (16)
The header is the AEAD associated data; the nonce is 4 zero bytes followed by the counter.
"""
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from constants import (AEAD_TAG_LEN, DATAGRAM_HEADER_LEN, MAX_DATAGRAM_PAYLOAD,
                       REKEY_AFTER_MESSAGES, REPLAY_WINDOW)
from errors import (PayloadTooLarge, ReplayRejected, SessionExpired, TamperedDatagram,
                    UnknownSession)

__all__ = ["ReplayWindow", "TunnelSession", "seal", "open_datagram", "peek_index",
           "HEADER_FORMAT"]

HEADER_FORMAT = ">IQ"
_MASK = (1 << REPLAY_WINDOW) - 1


class ReplayWindow:
    """
    Sliding bitmap over received counters. Bit i set means `highest - i` was seen.
    Accepts a counter at most once; anything at or below `highest - 64` is rejected.
    Not locked: the owning session serializes access.
    """

    __slots__ = ("highest", "bitmap")

    def __init__(self):
        self.highest = -1
        self.bitmap = 0

    def check(self, counter: int) -> bool:
        if counter > self.highest:
            return True
        offset = self.highest - counter
        if offset >= REPLAY_WINDOW:
            return False
        return not (self.bitmap >> offset) & 1

    def mark(self, counter: int) -> bool:
        """Record `counter`. False if it was already seen or is too old."""
        if counter > self.highest:
            shift = counter - self.highest
            self.bitmap = ((self.bitmap << shift) | 1) & _MASK if shift < REPLAY_WINDOW else 1
            self.highest = counter
            return True
        offset = self.highest - counter
        if offset >= REPLAY_WINDOW or (self.bitmap >> offset) & 1:
            return False
        self.bitmap |= 1 << offset
        return True


@dataclass(eq=False)
class TunnelSession:
    """Per-peer transport keys. Key material is never serialized."""

    peer_public: bytes
    send_key: bytes = field(repr=False)
    recv_key: bytes = field(repr=False)
    local_index: int
    peer_index: int
    peer_endpoint: Optional[Any] = None
    send_counter: int = 0
    replay_window: ReplayWindow = field(default_factory=ReplayWindow, repr=False)
    established_at: float = field(default_factory=time.monotonic)
    expired: bool = False

    def __post_init__(self):
        self._send_cipher = ChaCha20Poly1305(self.send_key)
        self._recv_cipher = ChaCha20Poly1305(self.recv_key)
        self._send_lock = threading.Lock()
        self._recv_lock = threading.Lock()

    def _next_counter(self) -> int:
        with self._send_lock:
            if self.expired or self.send_counter >= REKEY_AFTER_MESSAGES:
                self.expired = True
                raise SessionExpired("send counter exhausted, rekey required")
            counter = self.send_counter
            self.send_counter += 1
            return counter

    def seal(self, plaintext: bytes) -> bytes:
        if len(plaintext) > MAX_DATAGRAM_PAYLOAD:
            raise PayloadTooLarge(f"{len(plaintext)} bytes exceeds {MAX_DATAGRAM_PAYLOAD}")
        counter = self._next_counter()
        header = struct.pack(HEADER_FORMAT, self.peer_index, counter)
        nonce = b"\x00" * 4 + counter.to_bytes(8, "big")
        return header + self._send_cipher.encrypt(nonce, bytes(plaintext), header)

    def open(self, datagram: bytes) -> bytes:
        if len(datagram) < DATAGRAM_HEADER_LEN + AEAD_TAG_LEN:
            raise TamperedDatagram("datagram shorter than header and tag")
        header = bytes(datagram[:DATAGRAM_HEADER_LEN])
        index, counter = struct.unpack(HEADER_FORMAT, header)
        if index != self.local_index:
            raise UnknownSession(f"index {index:#010x} does not belong to this session")
        with self._recv_lock:
            if not self.replay_window.check(counter):
                raise ReplayRejected(f"counter {counter} already seen or too old")
        nonce = b"\x00" * 4 + counter.to_bytes(8, "big")
        try:
            plaintext = self._recv_cipher.decrypt(nonce, bytes(datagram[DATAGRAM_HEADER_LEN:]), header)
        except InvalidTag:
            raise TamperedDatagram("authentication tag mismatch") from None
        # Re-checked under the lock: a concurrent open of the same counter may have won.
        with self._recv_lock:
            if not self.replay_window.mark(counter):
                raise ReplayRejected(f"counter {counter} already seen")
        return plaintext


def seal(session: TunnelSession, plaintext: bytes) -> bytes:
    return session.seal(plaintext)


def open_datagram(session: TunnelSession, datagram: bytes) -> bytes:
    return session.open(datagram)


def peek_index(datagram: bytes) -> int:
    """Receiver index of a datagram, or -1 if it is too short to carry one."""
    if len(datagram) < 4:
        return -1
    return int.from_bytes(datagram[:4], "big")
