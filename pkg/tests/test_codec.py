import numpy as np
import pytest

from constants import ROBOT_MACHINE
from codec.delta import DELTA, KEYFRAME, CodecChunk, CodecState, decode, encode, zero_rld, zero_rle
from codec.frame import Frame
from codec.nodes import DecoderNode, EncoderNode, StreamPacket, make_codec, src_topic
from codec.perframe import per_frame_decode, per_frame_encode
from codec.synthetic import SyntheticVideo
from errors import CodecError, CorruptInput, DimensionOverflow, ResyncRequired


@pytest.fixture
def video():
    return SyntheticVideo(32, 24, 3, seed=4, block=6, speed=2)


def test_frame_validation():
    with pytest.raises(DimensionOverflow):
        Frame(2 ** 15 + 1, 1, 1, b"")
    with pytest.raises(ValueError):
        Frame(2, 2, 2, bytes(8))
    with pytest.raises(ValueError):
        Frame(2, 2, 1, bytes(3))
    with pytest.raises(CorruptInput):
        Frame.from_bytes(b"\x00\x01")
    with pytest.raises(CorruptInput):
        Frame.from_bytes(Frame(2, 2, 1, bytes(4)).to_bytes()[:-1])


def test_frame_array_view():
    arr = np.arange(24, dtype=np.uint8).reshape(2, 4, 3)
    frame = Frame.from_array(arr, 1.5, 9)
    assert (frame.width, frame.height, frame.channels) == (4, 2, 3)
    assert np.array_equal(frame.array(), arr)
    assert Frame.from_bytes(frame.to_bytes()) == frame


def test_streaming_codec_is_lossless(video):
    enc, dec = CodecState(), CodecState()
    kinds = []
    for i in range(61):
        original = video.frame(i, capture_instant=i / 30)
        chunk = CodecChunk.from_bytes(encode(enc, original).to_bytes())
        kinds.append(chunk.kind)
        decoded = decode(dec, chunk, frame_index=i, capture_instant=i / 30)
        assert decoded == original
    assert [i for i, k in enumerate(kinds) if k == KEYFRAME] == [0, 30, 60]


def test_deltas_are_much_smaller_than_raw_frames():
    video = SyntheticVideo(160, 120, 3, seed=1)
    state = CodecState()
    key = encode(state, video.frame(0))
    delta = encode(state, video.frame(1))
    assert key.kind == KEYFRAME and delta.kind == DELTA
    assert len(delta.encoded) * 8 < 160 * 120 * 3


def test_lost_delta_requires_resync(video):
    enc, dec = CodecState(), CodecState()
    chunks = [encode(enc, video.frame(i)) for i in range(3)]
    decode(dec, chunks[0])
    with pytest.raises(ResyncRequired) as err:
        decode(dec, chunks[2])
    assert (err.value.expected, err.value.got) == (0, 1)
    assert dec.last.frame_index == 0

    enc.request_keyframe()
    key = encode(enc, video.frame(3))
    assert key.is_keyframe
    assert decode(dec, key) == video.frame(3)


def test_delta_on_empty_decoder():
    enc = CodecState()
    encode(enc, Frame(2, 2, 1, bytes(4)))
    delta = encode(enc, Frame(2, 2, 1, bytes([0, 1, 0, 0]), frame_index=1))
    with pytest.raises(ResyncRequired) as err:
        decode(CodecState(), delta)
    assert err.value.expected == -1


def test_shape_change_forces_keyframe(video):
    state = CodecState()
    encode(state, video.frame(0))
    assert encode(state, SyntheticVideo(16, 16, 1).frame(1)).is_keyframe


def test_zero_run_coding():
    buf = np.zeros(100, dtype=np.uint8)
    buf[3] = 7          # short run before it stays literal
    buf[50:53] = [1, 2, 3]
    buf[99] = 9
    coded = zero_rle(buf)
    assert np.array_equal(zero_rld(coded, 100), buf)
    assert len(coded) < 100
    with pytest.raises(CorruptInput):
        zero_rld(coded, 99)


def test_corrupt_chunks():
    with pytest.raises(CorruptInput):
        CodecChunk.from_bytes(b"\x07" + bytes(30))
    bad = CodecChunk(KEYFRAME, 0, 2, 2, 1, b"not zlib")
    with pytest.raises(CorruptInput):
        decode(CodecState(), bad)


def test_per_frame_codec(video):
    frame = video.frame(5, 0.25)
    data = per_frame_encode(frame)
    assert len(data) < len(frame.pixels)
    assert per_frame_decode(data) == frame
    with pytest.raises(CorruptInput):
        per_frame_decode(b"XXXX" + data[4:])


def test_codec_registry(video):
    frame = video.frame(0)
    for mode in ("raw", "per-frame", "streaming"):
        codec = make_codec(mode)
        assert codec.decode(codec.encode(frame), 0, 0.0).pixels == frame.pixels
    with pytest.raises(CodecError):
        make_codec("h264")


def test_stream_packet():
    packet = StreamPacket("per-frame", 4, 0.5, b"body")
    assert StreamPacket.from_bytes(packet.to_bytes()) == packet
    with pytest.raises(CorruptInput):
        StreamPacket.from_bytes(b"nope")


def test_nodes_recover_from_a_lost_packet(mesh, video):
    robot, cloud = mesh[ROBOT_MACHINE], mesh["cloud"]
    robot.add_node("cam")
    robot.advertise("cam", src_topic("/camera"))
    encoder = EncoderNode(robot, "camera_encoder", "/camera", "streaming")
    decoder = DecoderNode(cloud, "camera_decoder_cloud", "/camera", "streaming")
    cloud.add_node("sink")
    got = []
    cloud.subscribe("sink", "/camera", lambda m: got.append(Frame.from_bytes(m.payload)))
    mesh.settle()

    cloud_address = mesh.endpoints["cloud"].address
    for i in range(6):
        if i == 2:
            mesh.network.set_filter(lambda src, dst, data: [] if dst == cloud_address else [data])
        robot.publish("cam", src_topic("/camera"), video.frame(i, mesh.clock.now()).to_bytes())
        mesh.network.set_filter(None)
        mesh.run(0.2)

    assert [f.frame_index for f in got] == [0, 1, 4, 5]
    assert all(f.pixels == video.frame(f.frame_index).pixels for f in got)
    assert decoder.resync_requests == 1
    assert encoder.resyncs == 1
    assert encoder.encoded == 6
    assert decoder.decoded == 4


def test_local_passthrough_keeps_robot_subscribers_fed(video):
    from pubsub.runtime import PubSubRuntime

    rt = PubSubRuntime(ROBOT_MACHINE)
    rt.add_node("cam")
    rt.advertise("cam", src_topic("/camera"))
    EncoderNode(rt, "camera_encoder", "/camera", "per-frame", local_passthrough=True)
    rt.add_node("viewer")
    seen = []
    rt.subscribe("viewer", "/camera", seen.append)
    raw = video.frame(0).to_bytes()
    rt.publish("cam", src_topic("/camera"), raw)
    assert [m.payload for m in seen] == [raw]


def _random_frames(rng, count):
    """Runs of same-shape frames with small edits, plus a few extreme shapes."""
    shapes = [(1, 1, 1), (1, 1, 4), (2 ** 15, 1, 1), (1, 2 ** 15, 1), (2 ** 15, 1, 3)]
    frames, arr = [], None
    while len(frames) < count:
        if shapes and rng.random() < 0.02:
            w, h, c = shapes.pop()
        else:
            w, h, c = int(rng.integers(1, 25)), int(rng.integers(1, 25)), int(rng.choice([1, 3, 4]))
        arr = rng.integers(0, 256, size=(h, w, c), dtype=np.uint8)
        for _ in range(int(rng.integers(1, 12))):
            i = len(frames)
            frames.append(Frame.from_array(arr, i / 30, i))
            arr = arr.copy()
            edits = int(rng.integers(0, arr.size + 1)) if rng.random() < 0.3 else int(rng.integers(0, 4))
            flat = arr.reshape(-1)
            flat[rng.integers(0, flat.size, size=edits)] = rng.integers(0, 256, size=edits,
                                                                        dtype=np.uint8)
    for w, h, c in shapes:
        i = len(frames)
        frames.append(Frame.from_array(np.full((h, w, c), 7, dtype=np.uint8), i / 30, i))
    return frames


@pytest.mark.parametrize("mode", ["raw", "per-frame", "streaming"])
def test_random_frames_survive_every_codec(mode):
    frames = _random_frames(np.random.default_rng(2024), 1000)
    assert len(frames) >= 1000
    assert {(f.width, f.height) for f in frames} >= {(1, 1), (2 ** 15, 1), (1, 2 ** 15)}
    sender, receiver = make_codec(mode), make_codec(mode)
    for frame in frames:
        body = sender.encode(frame)
        assert receiver.decode(body, frame.frame_index, frame.capture_instant) == frame


def test_bandwidth_ordering_on_low_motion_video():
    video = SyntheticVideo(160, 120, 3, seed=1)
    frames = [video.frame(i, i / 30) for i in range(90)]
    totals = {}
    for mode in ("raw", "per-frame", "streaming"):
        codec = make_codec(mode)
        totals[mode] = sum(len(codec.encode(f)) for f in frames)
    assert totals["streaming"] * 2 < totals["per-frame"]
    assert totals["per-frame"] * 2 < totals["raw"]
