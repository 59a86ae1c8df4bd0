import random
import stat
from types import SimpleNamespace

import pytest

from errors import (AddressExhausted, AuthenticationError, EntropyError, HandshakeTimeout,
                    PayloadTooLarge, ReplayRejected, TamperedDatagram, UnknownSession)
from overlay.addressing import assign_overlay_addresses, operator_address
from overlay.endpoint import OverlayEndpoint
from overlay.keys import KeyPair, b64, generate_keypair, seeded_entropy
from overlay.noise import channel_pair, complete, handshake, initiate, respond
from overlay.session import ReplayWindow
from overlay.transport import MemoryNetwork
from overlay.wgconfig import export_wireguard_config
from provision.link import LinkModel


def _pair():
    a = generate_keypair(seeded_entropy(1))
    b = generate_keypair(seeded_entropy(2))
    pending, init = initiate(a, b.public)
    responder, reply = respond(b, init, {a.public})
    return complete(pending, reply), responder


def test_keypair_from_seeded_entropy_is_reproducible(tmp_path):
    assert generate_keypair(seeded_entropy(7)) == generate_keypair(seeded_entropy(7))
    keys = generate_keypair()
    path = tmp_path / "keys" / "robot.key"
    keys.save(path)
    assert stat.S_IMODE(path.stat().st_mode) == 0o600
    assert KeyPair.load(path) == keys
    assert b64(keys.secret) not in repr(keys)


def test_bad_entropy():
    with pytest.raises(EntropyError):
        generate_keypair(lambda n: b"\x00" * (n - 1))


def test_handshake_gives_matching_sessions():
    initiator, responder = _pair()
    assert responder.open(initiator.seal(b"ping")) == b"ping"
    assert initiator.open(responder.seal(b"pong")) == b"pong"


def test_unauthorized_initiator_is_refused():
    a, b, c = (generate_keypair(seeded_entropy(i)) for i in (1, 2, 3))
    _, init = initiate(c, b.public)
    with pytest.raises(AuthenticationError):
        respond(b, init, {a.public})


def test_replayed_init_is_refused():
    a, b = generate_keypair(seeded_entropy(1)), generate_keypair(seeded_entropy(2))
    _, init = initiate(a, b.public)
    seen = {}
    respond(b, init, {a.public}, last_timestamps=seen)
    with pytest.raises(AuthenticationError, match="replayed"):
        respond(b, init, {a.public}, last_timestamps=seen)


def test_blocking_handshake_over_channels():
    import threading

    a, b = generate_keypair(), generate_keypair()
    left, right = channel_pair()
    out = {}
    t = threading.Thread(target=lambda: out.setdefault(
        "b", handshake(b, a.public, "responder", right, timeout=2.0)))
    t.start()
    session = handshake(a, b.public, "initiator", left, timeout=2.0)
    t.join()
    assert out["b"].open(session.seal(b"x")) == b"x"


def test_handshake_without_peer_times_out():
    a, b = generate_keypair(), generate_keypair()
    left, _ = channel_pair()
    with pytest.raises(HandshakeTimeout):
        handshake(a, b.public, "initiator", left, timeout=0.01, retries=2)


def test_wrong_peer_key_is_silent_towards_the_initiator():
    import threading

    a, b, stranger = generate_keypair(), generate_keypair(), generate_keypair()
    left, right = channel_pair()
    errors = []

    def responder():
        try:
            handshake(b, a.public, "responder", right, timeout=1.0, retries=1)
        except AuthenticationError as e:
            errors.append(e)

    t = threading.Thread(target=responder)
    t.start()
    with pytest.raises(HandshakeTimeout, match="refused our key"):
        handshake(a, stranger.public, "initiator", left, timeout=0.2, retries=1)
    t.join()
    assert len(errors) == 1
    assert left.recv(0.01) is None


def test_tampered_datagram():
    initiator, responder = _pair()
    data = bytearray(initiator.seal(b"payload"))
    data[-1] ^= 0x01
    with pytest.raises(TamperedDatagram):
        responder.open(bytes(data))


def test_replayed_datagram():
    initiator, responder = _pair()
    data = initiator.seal(b"once")
    responder.open(data)
    with pytest.raises(ReplayRejected):
        responder.open(data)


def test_wrong_index():
    initiator, _ = _pair()
    other_initiator, other_responder = _pair()
    with pytest.raises(UnknownSession):
        other_responder.open(initiator.seal(b"x"))


def test_payload_limit():
    initiator, _ = _pair()
    initiator.seal(b"x" * 1200)
    with pytest.raises(PayloadTooLarge):
        initiator.seal(b"x" * 1201)


def test_replay_window_out_of_order_within_window():
    w = ReplayWindow()
    for c in (5, 3, 4, 0):
        assert w.mark(c)
    assert not w.mark(3)
    assert w.mark(70)
    assert not w.check(6)       # fell off the window
    assert w.check(69)
    assert w.mark(69)
    assert not w.check(69)


def _window_model(counters, width=64):
    seen, highest, verdicts = set(), -1, []
    for c in counters:
        ok = c not in seen and c > highest - width
        if ok:
            seen.add(c)
            highest = max(highest, c)
        verdicts.append(ok)
    return verdicts


@pytest.mark.parametrize("seed", range(5))
def test_replay_window_matches_a_set_of_seen_counters(seed):
    rng = random.Random(seed)
    shuffled = list(range(10_000))
    rng.shuffle(shuffled)
    jittered = [max(0, i + rng.randint(-80, 80)) for i in range(10_000)]
    repeats = [rng.choice(jittered[max(0, i - 100):i + 1]) for i in range(10_000)]
    for counters in (shuffled, jittered, repeats):
        w = ReplayWindow()
        got = []
        for c in counters:
            before = w.check(c)
            got.append(w.mark(c))
            assert before == got[-1]
        assert got == _window_model(counters)


def test_addresses():
    table = assign_overlay_addresses(["gpu", "map"])
    assert str(table["robot"]) == "10.42.0.1"
    assert str(table["gpu"]) == "10.42.0.2"
    assert table["map"].cidr == "10.42.0.3/32"
    assert str(operator_address()) == "10.42.0.0"
    big = assign_overlay_addresses([f"m{i}" for i in range(300)])
    assert str(big["m299"]) == "10.42.1.45"


def test_address_limits():
    with pytest.raises(AddressExhausted):
        assign_overlay_addresses([f"m{i}" for i in range(65534)])
    with pytest.raises(ValueError):
        assign_overlay_addresses(["robot"])
    with pytest.raises(ValueError):
        assign_overlay_addresses(["a", "a"])


def _endpoints(net, n=2):
    eps = []
    for i in range(n):
        keys = generate_keypair(seeded_entropy(100 + i))
        eps.append(OverlayEndpoint(keys, net.attach(f"ep{i}"), name=f"ep{i}",
                                   entropy=seeded_entropy(200 + i)))
    return eps


def test_endpoints_exchange_over_a_shaped_network():
    net = MemoryNetwork(seed=1)
    a, b = _endpoints(net)
    net.set_link(a.address, b.address, LinkModel(10e6, 5.0))
    b.authorize(a.keypair.public)
    got = []
    b.set_handler(lambda peer, data: got.append((peer, data)))
    a.connect(b.keypair.public, b.address)
    assert net.clock.now() == pytest.approx(0.010, abs=1e-3)

    a.send(b.keypair.public, b"hello")
    net.pump()
    assert got == [(a.keypair.public, b"hello")]
    assert b.peers() == [a.keypair.public]


def test_endpoint_refuses_unauthorized_peer():
    net = MemoryNetwork()
    a, b = _endpoints(net)
    with pytest.raises(HandshakeTimeout, match="refused our key"):
        a.connect(b.keypair.public, b.address, timeout=0.5, retries=2)
    assert b.stats["AuthenticationError"] == 2
    assert b.peers() == []


def test_endpoint_counts_tampered_and_replayed_datagrams():
    net = MemoryNetwork()
    a, b = _endpoints(net)
    b.authorize(a.keypair.public)
    a.connect(b.keypair.public, b.address)
    captured = []
    net.add_tap(lambda src, dst, data: captured.append(data))
    a.send(b.keypair.public, b"one")
    net.pump()
    replay = captured[-1]
    tampered = bytearray(a.session_for(b.keypair.public).seal(b"two"))
    tampered[-3] ^= 0xFF
    a.transport.send(replay, b.address)
    a.transport.send(bytes(tampered), b.address)
    net.pump()
    assert b.stats["received"] == 1
    assert b.stats["ReplayRejected"] == 1
    assert b.stats["TamperedDatagram"] == 1


def test_send_without_session():
    net = MemoryNetwork()
    a, b = _endpoints(net)
    with pytest.raises(UnknownSession):
        a.send(b.keypair.public, b"x")


def _entry(name, public_key, address, endpoint=None):
    return SimpleNamespace(name=name, public_key=public_key, overlay_address=address,
                           endpoint=endpoint)


def test_wireguard_export_follows_cloud_edges():
    deployment = SimpleNamespace(
        robot=_entry("robot", "R=", "10.42.0.1", ("127.0.0.1", 51820)),
        machines=[_entry("gpu", "G=", "10.42.0.2", ("127.0.0.1", 40001)),
                  _entry("map", "M=", "10.42.0.3", ("127.0.0.1", 40002)),
                  _entry("cpu", "C=", "10.42.0.4", ("127.0.0.1", 40003))],
        cloud_edges=[("gpu", "map")])
    docs = export_wireguard_config(deployment)
    assert set(docs) == {"robot", "gpu", "map", "cpu"}
    assert "Address = 10.42.0.1/16" in docs["robot"]
    assert docs["robot"].count("[Peer]") == 3
    assert docs["gpu"].count("[Peer]") == 2
    assert "AllowedIPs = 10.42.0.3/32" in docs["gpu"]
    assert docs["cpu"].count("[Peer]") == 1
    assert all("PrivateKey =" not in text for text in docs.values())
    assert "ListenPort = 40001" in docs["gpu"]
