"""Observer-only websocket bridge streaming pub/sub topics to monitoring clients."""
from .bridge import (CLOSE_TRY_AGAIN_LATER, BridgeConfig, BridgeHandle, MonitorBridge, create_app,
                     start_bridge)
from .frames import ENCODINGS, FRAME_IMAGE, OPAQUE, TEXT, BridgeFrame, classify_payload, keepalive
from .streams import ClientStream

__all__ = [
    "CLOSE_TRY_AGAIN_LATER", "BridgeConfig", "BridgeHandle", "MonitorBridge", "create_app",
    "start_bridge",
    "ENCODINGS", "FRAME_IMAGE", "OPAQUE", "TEXT", "BridgeFrame", "classify_payload", "keepalive",
    "ClientStream",
]
