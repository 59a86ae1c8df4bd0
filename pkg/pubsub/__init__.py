"""Topic pub/sub over the overlay: envelopes, fragmentation, beacons, per-node dispatch."""
from .envelope import (KIND_ACK, KIND_BEACON, KIND_DATA, Envelope, envelope_overhead,
                       make_message_id)
from .fragment import Reassembler, fragment, max_fragment_payload
from .mesh import Mesh
from .peers import PeerTable, topic_matches
from .runtime import ACKED, BEST_EFFORT, Message, PubSubRuntime, Subscription

__all__ = [
    "KIND_ACK", "KIND_BEACON", "KIND_DATA", "Envelope", "envelope_overhead", "make_message_id",
    "Reassembler", "fragment", "max_fragment_payload",
    "Mesh",
    "PeerTable", "topic_matches",
    "ACKED", "BEST_EFFORT", "Message", "PubSubRuntime", "Subscription",
]
