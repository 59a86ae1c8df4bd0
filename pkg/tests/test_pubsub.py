import random

import pytest

from constants import ROBOT_MACHINE
from errors import (DeliveryFailed, DuplicateSubscription, MalformedEnvelope, MessageTooLarge,
                    NotAdvertised, PubSubError, TopicTooLong)
from provision.link import LinkModel
from pubsub.envelope import KIND_ACK, Envelope, check_topic, make_message_id, publisher_of
from pubsub.fragment import Reassembler, fragment, max_fragment_payload
from pubsub.mesh import Mesh
from pubsub.peers import PeerTable, topic_matches
from pubsub.runtime import ACKED, PubSubRuntime


def test_envelope_decode_checks():
    env = Envelope("/camera", 7, 1.25, make_message_id(9, 7), payload=b"abc")
    data = env.encode()
    assert Envelope.decode(data) == env
    with pytest.raises(MalformedEnvelope, match="magic"):
        Envelope.decode(b"XXXX" + data[4:])
    with pytest.raises(MalformedEnvelope):
        Envelope.decode(data[:-1])
    with pytest.raises(MalformedEnvelope, match="kind"):
        Envelope.decode(data[:5] + b"\x09" + data[6:])
    with pytest.raises(MalformedEnvelope):
        Envelope("/a", 1, 0.0, 1, frag_index=2, frag_count=2).encode()
    assert publisher_of(env.message_id) == 9
    assert Envelope("/a", 1, 0.0, 1, kind=KIND_ACK).encode()


def test_topic_limits():
    check_topic("/" + "x" * 255)
    with pytest.raises(TopicTooLong):
        check_topic("/" + "x" * 256)
    with pytest.raises(TopicTooLong):
        check_topic("")


def test_fragments_fit_a_datagram():
    payload = bytes(range(256)) * 20
    envs = fragment("/camera", payload, seq=1, message_id=5, publish_instant=0.0)
    assert len(envs) == -(-len(payload) // max_fragment_payload("/camera"))
    assert all(len(e.encode()) <= 1200 for e in envs)
    assert b"".join(e.payload for e in envs) == payload


def test_empty_payload_is_one_fragment():
    (env,) = fragment("/a", b"", seq=1, message_id=1, publish_instant=0.0)
    assert env.frag_count == 1 and env.payload == b""


def test_too_many_fragments():
    with pytest.raises(MessageTooLarge):
        fragment("/a", b"x" * 70_000, seq=1, message_id=1, publish_instant=0.0, max_fragment=1)


def test_reassembly_in_any_order():
    envs = fragment("/a", b"0123456789", seq=1, message_id=3, publish_instant=0.0, max_fragment=3)
    r = Reassembler()
    results = [r.add("peer", e, 0.0) for e in reversed(envs)]
    assert results[:-1] == [None] * (len(envs) - 1)
    assert results[-1] == b"0123456789"
    assert r.pending == 0


def test_reassembly_timeout_counts_from_last_fragment():
    envs = fragment("/a", b"0123456789", seq=1, message_id=3, publish_instant=0.0, max_fragment=3)
    r = Reassembler(timeout=2.0)
    r.add("peer", envs[0], 0.0)
    r.add("peer", envs[1], 1.5)
    assert r.expire(2.5) == 0
    assert r.expire(3.6) == 1
    assert r.dropped == 1
    assert r.add("peer", envs[2], 3.7) is None


def test_reassembly_rejects_inconsistent_fragments():
    a = fragment("/a", b"0123456789", seq=1, message_id=3, publish_instant=0.0, max_fragment=3)
    b = fragment("/b", b"0123456789", seq=1, message_id=3, publish_instant=0.0, max_fragment=3)
    r = Reassembler()
    r.add("peer", a[0], 0.0)
    with pytest.raises(MalformedEnvelope):
        r.add("peer", b[1], 0.0)


def test_topic_patterns():
    assert topic_matches("/diag/*", "/diag/cpu")
    assert not topic_matches("/diag/*", "/camera")
    assert topic_matches("/camera", "/camera")
    assert not topic_matches("/camera", "/camera/enc")


def test_peer_table_staleness():
    table = PeerTable(interval=1.0, stale_after=5)
    assert not table.update(b"k", {"topics": {"/a": "acked"}}, 0.0)
    table.register(b"k", 0.0, "cloud")
    assert table.update(b"k", {"machine": "cloud", "topics": {"/a": "acked"}}, 0.0)
    assert table.subscribers("/a", 4.9) == {b"k": "acked"}
    assert table.is_stale(b"k", 5.0)
    assert table.subscribers("/a", 5.0) == {}
    assert table.snapshot(1.0)["cloud"]["topics"] == ["/a"]


def test_local_registration_errors():
    rt = PubSubRuntime("robot")
    with pytest.raises(PubSubError):
        rt.advertise("ghost", "/a")
    rt.add_node("cam")
    with pytest.raises(NotAdvertised):
        rt.publish("cam", "/a", b"x")
    rt.subscribe("cam", "/b", lambda m: None)
    with pytest.raises(DuplicateSubscription):
        rt.subscribe("cam", "/b", lambda m: None)
    with pytest.raises(PubSubError):
        rt.subscribe("cam", "/c", lambda m: None, mode="exactly-once")


def test_local_delivery_is_immediate():
    rt = PubSubRuntime("robot")
    rt.add_node("cam")
    rt.add_node("viewer")
    rt.advertise("cam", "/camera")
    got = []
    rt.subscribe("viewer", "/camera", got.append)
    assert rt.publish("cam", "/camera", b"f1") == 1
    assert rt.publish("cam", "/camera", b"f2") == 2
    assert [(m.seq, m.payload, m.source) for m in got] == [(1, b"f1", "robot"), (2, b"f2", "robot")]


def _wire(mesh, topic="/camera", mode="best-effort"):
    robot, cloud = mesh[ROBOT_MACHINE], mesh["cloud"]
    robot.add_node("cam")
    robot.advertise("cam", topic)
    cloud.add_node("sink")
    got = []
    cloud.subscribe("sink", topic, got.append, mode=mode)
    mesh.settle()
    return robot, cloud, got


def test_remote_delivery_and_latency(mesh):
    robot, cloud, got = _wire(mesh)
    assert robot.wait_for_remote_topics(["/camera"], 1.0)
    sent_at = mesh.clock.now()
    arrivals = []
    cloud.subscribe("sink", "/other", lambda m: None)
    cloud.unsubscribe("sink", "/other")
    robot.add_node("probe")
    robot.subscribe("probe", "/camera", lambda m: arrivals.append(m))
    payload = bytes(5000)
    robot.publish("cam", "/camera", payload)
    mesh.network.pump()
    assert len(arrivals) == 1          # local subscriber on the robot, delivered at once
    (msg,) = got
    assert msg.payload == payload
    assert msg.source == ROBOT_MACHINE
    assert msg.publish_instant == pytest.approx(sent_at, abs=1e-6)
    # five fragments over 10 Mbit/s plus 6.1 ms of propagation
    assert 0.006 < mesh.clock.now() - sent_at < 0.012


def test_local_scope_stays_on_the_machine(mesh):
    robot, cloud, got = _wire(mesh)
    robot.publish("cam", "/camera", b"x", scope="local")
    mesh.network.pump()
    assert got == []


def test_late_subscriber_learns_through_beacons(mesh):
    robot, cloud = mesh[ROBOT_MACHINE], mesh["cloud"]
    robot.add_node("cam")
    robot.advertise("cam", "/camera")
    robot.publish("cam", "/camera", b"early")
    cloud.add_node("sink")
    got = []
    cloud.subscribe("sink", "/camera", got.append)
    mesh.settle()
    robot.publish("cam", "/camera", b"late")
    mesh.network.pump()
    assert [m.payload for m in got] == [b"late"]
    assert got[0].seq == 2


def test_acked_delivery_retries_a_lost_message(mesh):
    robot, cloud, got = _wire(mesh, mode=ACKED)
    cloud_address = mesh.endpoints["cloud"].address
    armed = {"drop": True}

    def drop_first(src, dst, data):
        if armed["drop"] and dst == cloud_address:
            armed["drop"] = False
            return []
        return [data]

    mesh.network.set_filter(drop_first)
    robot.publish("cam", "/camera", b"must arrive", wait=True, timeout=2.0)
    assert [m.payload for m in got] == [b"must arrive"]
    assert robot.stats["retries"] == 1
    assert robot.stats["acks_received"] == 1
    assert robot.metrics()["acks_pending"] == 0


def test_acked_delivery_fails_after_retries(mesh):
    robot, cloud, got = _wire(mesh, mode=ACKED)
    robot_address = mesh.endpoints[ROBOT_MACHINE].address
    mesh.network.set_filter(lambda src, dst, data: [] if dst == robot_address else [data])
    failures = []
    robot.on_delivery_failed = failures.append
    with pytest.raises(DeliveryFailed):
        robot.publish("cam", "/camera", b"x", wait=True, timeout=2.0)
    mesh.run(0.5)
    assert robot.stats["retries"] == 3
    assert len(failures) == 1 and robot.failures == failures
    # the cloud got the first copy and treated the retries as duplicates
    assert len(got) == 1
    assert cloud.stats["duplicates"] == 3


def test_silent_peer_goes_stale(mesh):
    robot, cloud, got = _wire(mesh)
    cloud_key = mesh.public_key("cloud")
    assert not robot.peers.is_stale(cloud_key, mesh.clock.now())
    robot_address = mesh.endpoints[ROBOT_MACHINE].address
    mesh.network.set_filter(lambda src, dst, data: [] if dst == robot_address else [data])
    mesh.run(6.0)
    assert robot.peers.is_stale(cloud_key, mesh.clock.now())
    robot.publish("cam", "/camera", b"nobody")
    mesh.network.pump()
    assert got == []


def test_older_sequence_numbers_are_dropped(mesh):
    robot, cloud, got = _wire(mesh)
    cloud_address = mesh.endpoints["cloud"].address
    held = []

    def swap(src, dst, data):
        if dst != cloud_address:
            return [data]
        if not held:
            held.append(data)
            return []
        return [data, held.pop()]

    mesh.network.set_filter(swap)
    robot.publish("cam", "/camera", b"first")
    robot.publish("cam", "/camera", b"second")
    mesh.network.set_filter(None)
    mesh.network.pump()
    assert [m.seq for m in got] == [2]
    assert cloud.stats["out_of_order"] == 1


@pytest.mark.parametrize("count", [200, pytest.param(10_000, marks=pytest.mark.slow)])
def test_adversarial_channel(mesh, count):
    """Drops, duplicates and bit flips never surface as reordered, repeated or corrupt data."""
    robot, cloud, got = _wire(mesh)
    rng = random.Random(11)

    def hostile(src, dst, data):
        roll = rng.random()
        if roll < 0.1:
            return []
        if roll < 0.2:
            return [data, data]
        if roll < 0.3:
            flipped = bytearray(data)
            flipped[rng.randrange(len(flipped))] ^= 0x40
            return [bytes(flipped)]
        return [data]

    mesh.network.set_filter(hostile)
    sent = {}
    for i in range(count):
        payload = bytes([i % 256]) * (100 + 7 * (i % 200))
        seq = robot.publish("cam", "/camera", payload)
        sent[seq] = payload
        mesh.run(0.02)
    mesh.network.set_filter(None)
    mesh.run(3.0)

    seqs = [m.seq for m in got]
    assert seqs == sorted(set(seqs))
    assert all(m.payload == sent[m.seq] for m in got)
    assert 0 < len(got) < count
    cloud_stats = mesh.endpoints["cloud"].stats
    assert cloud_stats["ReplayRejected"] > 0
    assert cloud_stats["TamperedDatagram"] > 0
    assert cloud.metrics()["reassembly_pending"] == 0


def test_fanout_over_a_full_mesh():
    mesh = Mesh([ROBOT_MACHINE, "a", "b"], links={"a": LinkModel(10e6, 5.0)}, topology="full",
                seed=5)
    try:
        mesh["a"].add_node("pub")
        mesh["a"].advertise("pub", "/map")
        inbox = {}
        for name in (ROBOT_MACHINE, "b"):
            mesh[name].add_node("sub")
            inbox[name] = []
            mesh[name].subscribe("sub", "/map", inbox[name].append)
        mesh.settle()
        mesh["a"].publish("pub", "/map", b"tile")
        mesh.network.pump()
        assert [m.payload for m in inbox[ROBOT_MACHINE]] == [b"tile"]
        assert [m.source for m in inbox["b"]] == ["a"]
    finally:
        mesh.close()


def test_nothing_readable_crosses_the_wire(mesh):
    captured = []
    mesh.network.add_tap(lambda src, dst, data: captured.append(data))
    robot, cloud, got = _wire(mesh, topic="/secret/pose")
    marker = b"plaintext-marker-0123456789"
    for i in range(50):
        robot.publish("cam", "/secret/pose", marker + bytes([i]) * (10 + 40 * i))
        mesh.run(0.02)
    mesh.run(1.0)

    assert len(got) == 50
    assert len(captured) > 50
    for data in captured:
        assert marker not in data
        assert b"/secret/pose" not in data
