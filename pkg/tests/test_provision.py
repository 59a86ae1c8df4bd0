import pytest

from core.clock import SimulatedClock
from errors import (CapacityExhausted, ImageInUse, ProvisionError, UnknownBackend, UnknownImage,
                    UnknownInstanceType, UnknownMachine, UnknownRegion)
from provision import (READY, TERMINATED, ImageRegistry, Inventory, Link, LinkModel,
                       MachineHandle, PhaseDelays, emulated_send, list_instances, load_catalog,
                       make_backend)
from provision.types import ImageRecord, InstanceType


def _backend(name, catalog, state_dir=None, **opts):
    opts.setdefault("agent_mode", "none")
    return make_backend(name, catalog, state_dir=state_dir, scale=1.0, clock=SimulatedClock(),
                        jitter=0.0, **opts)


def _phases(handle):
    return [(p.phase, round(p.duration, 6)) for p in handle.boot_timeline]


def test_mock_cloud_default_image_installs(catalog, state_dir):
    backend = _backend("mock-cloud", catalog, state_dir)
    handle = backend.create_instance("us-west-1", "small")
    assert handle.state == READY
    assert _phases(handle) == [("boot", 40.0), ("install", 235.0)]
    assert handle.startup_s == pytest.approx(275.0)


def test_mock_cloud_prebuilt_image_skips_install(catalog, state_dir):
    backend = _backend("mock-cloud", catalog, state_dir)
    image = backend.build_image("us-west-1", manifest=["slam"], tags=["gpu"])
    assert image.preinstalled and image.capability_tags == frozenset({"gpu"})
    handle = backend.create_instance("us-west-1", "small", image.image_id)
    assert _phases(handle) == [("boot", 40.0), ("setup", 45.0)]


def test_local_process_phases(catalog):
    backend = _backend("local-process", catalog)
    handle = backend.create_instance("local", "small")
    assert [p for p, _ in _phases(handle)] == ["spawn", "install"]
    assert handle.startup_s == pytest.approx(235.0)


def test_warm_pool_pays_only_scheduling(catalog):
    backend = _backend("warm-pool", catalog)
    state = backend.warm_pool_configure(1, "small", region="us-west-1")
    assert state["available"] == 1
    assert backend.startup_cost_s == pytest.approx(275.0)

    handle = backend.create_instance("us-west-1", "small")
    assert _phases(handle) == [("schedule", 29.0)]
    backend.destroy_instance(handle)
    assert backend.pool("us-west-1").available == 1
    assert backend.pool("us-west-1").outstanding == 0

    again = backend.create_instance("us-west-1", "small")
    assert again.startup_s == pytest.approx(29.0)
    assert backend.pool("us-west-1").grown == 0


def test_warm_pool_grows_with_a_cold_start(catalog):
    backend = _backend("warm-pool", catalog)
    backend.warm_pool_configure(1, "small", region="us-west-1")
    backend.create_instance("us-west-1", "small")
    cold = backend.create_instance("us-west-1", "small")
    assert [p for p, _ in _phases(cold)] == ["boot", "install", "schedule"]
    assert cold.startup_s == pytest.approx(304.0)
    assert backend.pool("us-west-1").grown == 1


def test_warm_pool_without_growth(catalog):
    backend = _backend("warm-pool", catalog)
    backend.warm_pool_configure(1, "small", region="us-west-1", grow=False)
    backend.create_instance("us-west-1", "small")
    with pytest.raises(CapacityExhausted):
        backend.create_instance("us-west-1", "small")


def test_warm_pool_rejects_other_instance_types(catalog):
    backend = _backend("warm-pool", catalog)
    backend.warm_pool_configure(1, "small", region="us-west-1")
    with pytest.raises(ProvisionError):
        backend.create_instance("us-west-1", "large")


def test_warm_pool_never_serves_another_region(catalog):
    backend = _backend("warm-pool", catalog)
    backend.warm_pool_configure(1, "small", region="us-west-1")
    with pytest.raises(ProvisionError, match="us-east-2"):
        backend.create_instance("us-east-2", "small")
    assert backend.pool("us-west-1").available == 1


def test_warm_pool_without_a_region_fills_every_region(catalog):
    backend = _backend("warm-pool", catalog)
    state = backend.warm_pool_configure(1, "small")
    assert state["regions"] == ["us-east-2", "us-west-1"]
    assert state["available"] == 2
    assert backend.startup_cost_s == pytest.approx(275.0)

    east = backend.create_instance("us-east-2", "small")
    west = backend.create_instance("us-west-1", "small")
    assert _phases(east) == _phases(west) == [("schedule", 29.0)]
    assert backend.pool("us-east-2").outstanding == 1
    backend.destroy_instance(east)
    assert backend.pool("us-east-2").available == 1
    assert backend.pool("us-west-1").available == 0


def test_unconfigured_warm_pool_cold_starts_in_the_asked_region(catalog):
    backend = _backend("warm-pool", catalog)
    handle = backend.create_instance("us-east-2", "small")
    assert [p for p, _ in _phases(handle)] == ["boot", "install", "schedule"]
    backend.destroy_instance(handle)
    assert backend.pool_state()["regions"] == ["us-east-2"]
    assert backend.pool("us-east-2").available == 1


def test_unknown_inputs(catalog):
    backend = _backend("mock-cloud", catalog)
    with pytest.raises(UnknownRegion):
        backend.create_instance("local", "small")
    with pytest.raises(UnknownInstanceType):
        backend.create_instance("us-west-1", "huge")
    with pytest.raises(UnknownImage):
        backend.create_instance("us-west-1", "small", "img-nope")
    with pytest.raises(UnknownBackend):
        make_backend("ec2", catalog)


def test_destroy_is_idempotent_and_checks_ownership(catalog, state_dir):
    backend = _backend("mock-cloud", catalog, state_dir)
    handle = backend.create_instance("us-west-1", "small")
    assert [h.machine_id for h in backend.list_instances()] == [handle.machine_id]
    assert backend.destroy_instance(handle)
    assert handle.state == TERMINATED
    assert backend.destroy_instance(handle)
    assert backend.list_instances() == []
    with pytest.raises(UnknownMachine):
        backend.destroy_instance(MachineHandle("mc-ghost", "mock-cloud", "us-west-1"))


def test_inventory_is_shared_through_the_state_dir(catalog, state_dir):
    backend = _backend("mock-cloud", catalog, state_dir)
    handle = backend.create_instance("us-west-1", "small", machine="gpu")
    listed = list_instances(state_dir)
    assert [(h.machine_id, h.machine, h.state) for h in listed] == [
        (handle.machine_id, "gpu", READY)]
    other = Inventory(state_dir, "mock-cloud")
    assert other.get(handle.machine_id).boot_timeline[0].phase == "boot"


def test_inventory_reconcile_drops_dead_owners(state_dir):
    inv = Inventory(state_dir, "mock-cloud")
    inv.put(MachineHandle("mc-dead", "mock-cloud", "us-west-1", owner_pid=2 ** 22 + 12345))
    assert inv.reconcile() == ["mc-dead"]
    assert not inv.has("mc-dead")


def test_probe_region_is_near_the_configured_rtt(catalog):
    backend = _backend("mock-cloud", catalog, profile="east")
    probes = backend.probe_all()
    assert set(probes) == {"us-east-2", "us-west-1"}
    assert all(abs(s - 13.0) <= 0.5 for s in probes["us-east-2"])
    assert len(probes["us-west-1"]) == 5


def test_machine_state_only_moves_forward():
    handle = MachineHandle("m-1", "mock-cloud", "us-west-1")
    handle.advance(READY)
    with pytest.raises(ProvisionError):
        handle.advance("installing")
    handle.advance(TERMINATED)
    with pytest.raises(ProvisionError):
        handle.advance("bogus")


def test_phases_cannot_overlap():
    handle = MachineHandle("m-1", "mock-cloud", "us-west-1")
    handle.record_phase("boot", 0.0, 2.0)
    with pytest.raises(ProvisionError):
        handle.record_phase("install", 1.0, 3.0)


def test_image_registry_persists(state_dir):
    path = state_dir / "images.json"
    ImageRegistry(path).add(ImageRecord("img-1", "mock-cloud", "us-west-1", created_at=1.0))
    images = ImageRegistry(path)
    assert images.get("img-1").preinstalled
    assert images.exists("default") and not images.preinstalled("default")
    with pytest.raises(ValueError):
        images.add(ImageRecord("img-1", "mock-cloud", "us-west-1"))
    with pytest.raises(ImageInUse):
        images.remove("img-1", in_use=["img-1"])
    images.remove("img-1")
    with pytest.raises(UnknownImage):
        images.remove("img-1")


def test_catalog_lookups(catalog):
    assert catalog.regions_for("mock-cloud") == ["us-east-2", "us-west-1"]
    assert catalog.regions_for("local-process") == ["local"]
    link = catalog.link_for("us-west-1")
    assert link.propagation_delay_ms == pytest.approx(3.05)
    assert catalog.with_profile("east").rtt_ms("us-east-2") == 13.0
    with pytest.raises(UnknownRegion):
        catalog.with_profile("single").rtt_ms("us-east-2")


def test_load_catalog_overrides_and_fallback(tmp_path):
    assert load_catalog(tmp_path / "missing.yaml").default_profile == "west"
    path = tmp_path / "catalog.yaml"
    path.write_text("delays: {boot: 1}\n"
                    "instance_types:\n"
                    "  - {type_id: tiny, cpu_cores: 1, memory: 512, price: 0.01}\n")
    catalog = load_catalog(path)
    assert catalog.delays.boot == 1.0
    assert catalog.delays.install == 235.0
    assert catalog.instance_types == [InstanceType("tiny", 1, 512, 0, 0.01)]
    path.write_text("flavours: []\n")
    with pytest.raises(ProvisionError):
        load_catalog(path)


def test_phase_delays_scale():
    assert PhaseDelays().scaled(0.01).install == pytest.approx(2.35)
    with pytest.raises(ValueError):
        PhaseDelays().scaled(0)


def test_link_serializes_back_to_back_sends():
    link = Link(LinkModel(10e6, 5.0))
    first = link.transmit(1250, 0.0)
    second = link.transmit(1250, 0.0)
    assert first == pytest.approx(0.001 + 0.005)
    assert second == pytest.approx(0.002 + 0.005)
    assert link.backlog_s(0.0) == pytest.approx(0.002)
    assert link.bytes_sent == 2500


def test_emulated_send_and_loss():
    model = LinkModel(1e6, 10.0)
    assert emulated_send(model, 1000, 1.0) == pytest.approx(1.0 + 0.010 + 0.001)
    lossy = Link(LinkModel(1e6, 0.0, loss_rate=0.5), seed=1)
    results = [lossy.transmit(10, 0.0) for _ in range(200)]
    assert 50 < sum(r is None for r in results) < 150
    with pytest.raises(ValueError):
        LinkModel(1e6, 0.0, loss_rate=1.0)
