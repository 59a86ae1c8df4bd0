"""Encrypted UDP overlay: keys, Noise IK handshake, sealed datagrams, addressing."""
from .addressing import OverlayAddress, assign_overlay_addresses, operator_address
from .endpoint import OverlayEndpoint
from .keys import KeyPair, derive_public, generate_keypair, seeded_entropy
from .noise import channel_pair, complete, handshake, initiate, respond
from .session import ReplayWindow, TunnelSession, open_datagram, seal
from .transport import MemoryNetwork, MemoryTransport, UdpTransport
from .wgconfig import export_wireguard_config

__all__ = [
    "OverlayAddress", "assign_overlay_addresses", "operator_address",
    "OverlayEndpoint",
    "KeyPair", "derive_public", "generate_keypair", "seeded_entropy",
    "channel_pair", "complete", "handshake", "initiate", "respond",
    "ReplayWindow", "TunnelSession", "open_datagram", "seal",
    "MemoryNetwork", "MemoryTransport", "UdpTransport",
    "export_wireguard_config",
]
