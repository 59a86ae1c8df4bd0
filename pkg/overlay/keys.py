"""
Static key pairs for overlay peers (X25519).
Secrets can be written to a 0600 key file; they are never part of a deployment record.
"""
import base64
import os
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

from errors import EntropyError

__all__ = ["KeyPair", "Entropy", "generate_keypair", "derive_public", "seeded_entropy",
           "b64", "unb64"]

Entropy = Callable[[int], bytes]


def b64(raw: bytes) -> str:
    return base64.b64encode(raw).decode("ascii")


def unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


def derive_public(secret: bytes) -> bytes:
    return X25519PrivateKey.from_private_bytes(secret).public_key().public_bytes_raw()


def seeded_entropy(seed: int) -> Entropy:
    """Deterministic entropy for tests. Not for real deployments."""
    rng = random.Random(seed)
    return rng.randbytes


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    secret: bytes

    def __repr__(self) -> str:
        return f"KeyPair(public={b64(self.public)!r})"

    @property
    def public_b64(self) -> str:
        return b64(self.public)

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w") as f:
            f.write(b64(self.secret) + "\n")

    @classmethod
    def load(cls, path: Path) -> "KeyPair":
        secret = unb64(Path(path).read_text().strip())
        return cls(public=derive_public(secret), secret=secret)


def generate_keypair(entropy: Optional[Entropy] = None) -> KeyPair:
    """New X25519 pair. `entropy(n)` defaults to os.urandom."""
    source = entropy or os.urandom
    try:
        secret = source(32)
    except Exception as e:
        raise EntropyError(f"entropy source failed: {e}") from e
    if not isinstance(secret, (bytes, bytearray)) or len(secret) != 32:
        raise EntropyError("entropy source returned the wrong number of bytes")
    private = X25519PrivateKey.from_private_bytes(bytes(secret))
    return KeyPair(public=private.public_key().public_bytes_raw(), secret=private.private_bytes_raw())
