ROBOT_MACHINE = "robot"
BACKENDS = ("mock-cloud", "local-process", "warm-pool")
AUTO = "AUTO"
DEFAULT_IMAGE = "default"

# Startup phases, full-scale seconds (multiplied by the scale factor)
BOOT_DELAY_S = 40.0
INSTALL_DELAY_S = 235.0
IMAGE_SETUP_DELAY_S = 45.0     # pre-installed image: workspace copy + configure
SCHEDULING_DELAY_S = 29.0
DEFAULT_SCALE = 0.01
MOCK_JITTER_S = 0.005

# Overlay
OVERLAY_PREFIX = "10.42"
OVERLAY_ROBOT_HOST = 1
OVERLAY_OPERATOR_HOST = 0
OVERLAY_MAX_MACHINES = 65533
MAX_DATAGRAM_PAYLOAD = 1200
DATAGRAM_HEADER_LEN = 12
AEAD_TAG_LEN = 16
REPLAY_WINDOW = 64
REKEY_AFTER_MESSAGES = 2**60
HANDSHAKE_TIMEOUT_S = 1.0
HANDSHAKE_RETRIES = 3

# Pub/sub
ENVELOPE_MAGIC = b"FOG2"
ENVELOPE_VERSION = 1
MAX_TOPIC_BYTES = 256
MAX_MESSAGE_BYTES = 64 * 1024 * 1024
ANNOUNCE_INTERVAL_S = 1.0
STALE_AFTER_INTERVALS = 5
REASSEMBLY_TIMEOUT_S = 2.0
ACK_TIMEOUT_S = 0.25
ACK_RETRIES = 3
CONTROL_PREFIX = "/_fog"

# Codec
KEYFRAME_INTERVAL = 30
MAX_FRAME_SIDE = 2**15
MIN_ZERO_RUN = 8
ZLIB_LEVEL = 3

# Monitor
BRIDGE_SUBPROTOCOL = "fogmesh-bridge-v1"
BRIDGE_PATH = "/topics"
BRIDGE_DEFAULT_PORT = 8765
BRIDGE_MAX_CLIENTS = 8
BRIDGE_RATE_CAP_HZ = 10.0
BRIDGE_KEEPALIVE_S = 1.0
BRIDGE_QUEUE_DEPTH = 64

# Bench
VIDEO_FRAMES = 3000
VIDEO_WIDTH = 640
VIDEO_HEIGHT = 480
VIDEO_CHANNELS = 3
VIDEO_FPS = 30.0
VIDEO_WARMUP_FRAMES = 30
LINK_BANDWIDTH_BPS = 10_000_000
LINK_DELAY_MS = 6.1

# Provisioning
PROBE_SAMPLES = 5
PROBE_JITTER_MS = 0.5
LOCAL_RTT_MS = 0.1
AGENT_HELLO_TIMEOUT_S = 10.0
HEARTBEAT_INTERVAL_S = 0.5
HEARTBEAT_TIMEOUT_S = 5.0
LAUNCH_WAIT_TIMEOUT_S = 10.0
CONTROL_TIMEOUT_S = 30.0
