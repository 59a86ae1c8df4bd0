import time

import pytest

from constants import ROBOT_MACHINE
from errors import (AgentError, InjectedCrash, MachineNotReady, UnknownDeployment,
                    UnknownMachine)
from launch.spec import NodeSpec, parse_launch_spec
from orchestrator import Orchestrator
from orchestrator.agent import MachineAgent
from orchestrator.behaviors import make_behavior
from orchestrator.record import DEGRADED, DELETED, LAUNCHING, RUNNING, DeploymentRecord, MachineEntry
from orchestrator.store import StateStore
from provision.inventory import list_instances
from provision.types import READY, TERMINATED
from pubsub.runtime import PubSubRuntime

SCALE = 0.001

BROKEN_SPEC = """\
name: broken
machines:
  - {name: gpu, backend: mock-cloud, region: us-west-1, instance_type: small, image: default}
nodes:
  - name: tool
    behavior: custom-executable
    machine: gpu
    params: {path: bin/missing.sh}
    subscribes: [/camera]
"""


def _wait(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.02)
    return predicate()


@pytest.fixture
def orch(state_dir, catalog):
    o = Orchestrator(state_dir, catalog=catalog, scale=SCALE, seed=1)
    yield o
    o.shutdown()


@pytest.fixture
def running(orch, demo_spec_text):
    plan = orch.prepare(parse_launch_spec(demo_spec_text))
    return orch.execute(plan)


def test_prepare_binds_and_orders(orch, demo_spec_text):
    plan = orch.prepare(parse_launch_spec(demo_spec_text))
    assert plan.kinds[0] == "resolve"
    assert plan.kinds[-1] == "launch-robot-nodes"
    assert "install" in plan.kinds


def test_launch_runs_end_to_end(orch, running, state_dir):
    assert running.status == RUNNING
    assert [s["kind"] for s in running.steps][:2] == ["resolve", "provision"]
    gpu = running.machine("gpu")
    assert gpu.state == READY
    assert gpu.public_key and gpu.overlay_address == "10.42.0.2"
    assert [p["phase"] for p in gpu.phases] == ["boot", "install"]
    assert running.bindings == {"camera": ROBOT_MACHINE, "echo": "gpu"}

    stored = orch.store.load(running.deployment_id)
    assert stored.status == RUNNING
    assert [h.machine_id for h in list_instances(state_dir)] == [gpu.machine_id]

    camera = orch.deployment(running.deployment_id).behavior("camera")
    assert _wait(lambda: len(camera.latencies) >= 3)
    assert all(0 <= latency < 1.0 for latency in camera.latencies)


def test_health_snapshot_of_a_running_deployment(orch, running):
    snap = orch.health_snapshot(running.deployment_id)
    assert snap["status"] == RUNNING
    assert snap["machines"]["gpu"]["alive"]
    assert snap["nodes"]["camera"] == {"machine": ROBOT_MACHINE, "alive": True}
    assert snap["nodes"]["echo"]["machine"] == "gpu"
    assert set(snap["drops"]) >= {"delivery_failed", "duplicates"}


def test_teardown_is_idempotent(orch, running, state_dir):
    record = orch.teardown(running.deployment_id)
    assert record.status == DELETED
    assert record.machine("gpu").state == TERMINATED
    assert list_instances(state_dir) == []
    assert orch.store.load_key(running.deployment_id, "operator") is None
    again = orch.teardown(running.deployment_id)
    assert again.deleted_at == record.deleted_at
    assert orch.health_snapshot(running.deployment_id)["status"] == DELETED
    with pytest.raises(MachineNotReady):
        orch.attach(running.deployment_id, "gpu")


def test_unknown_deployment(orch):
    with pytest.raises(UnknownDeployment):
        orch.teardown("dep-nope")
    with pytest.raises(UnknownDeployment):
        orch.health_snapshot("dep-nope")


def test_attach_runs_commands_on_the_agent(orch, running):
    with orch.attach(running.deployment_id, "gpu") as session:
        assert session.execute("nodes")["result"] == ["echo"]
        assert session.execute("ping")["result"]["machine"] == "gpu"
        assert session.execute("no-such-binary-here")["returncode"] == 127
        assert session.status()["peer_configured"]
    with pytest.raises(UnknownMachine):
        orch.attach(running.deployment_id, "nope")


def test_failed_step_leaves_the_deployment_degraded(orch):
    record = orch.execute(orch.prepare(parse_launch_spec(BROKEN_SPEC)))
    assert record.status == DEGRADED
    assert record.failed_step == "workspace-copy"
    assert "bin/missing.sh" in record.error
    # machines stay up for inspection
    assert record.machine("gpu").state == READY
    assert orch.store.load(record.deployment_id).status == DEGRADED


def test_no_partial_tears_down_after_a_failure(orch, state_dir):
    record = orch.execute(orch.prepare(parse_launch_spec(BROKEN_SPEC)), no_partial=True)
    assert record.status == DEGRADED
    assert record.machine("gpu").state == TERMINATED
    assert list_instances(state_dir) == []


DEMO_STEPS = ["resolve", "provision", "install", "tunnel-setup", "workspace-copy", "peer-config",
              "launch-cloud-nodes", "launch-robot-nodes"]


@pytest.mark.parametrize("kind", DEMO_STEPS)
def test_crash_at_a_step_boundary_is_recoverable(orch, demo_spec_text, state_dir, catalog, kind):
    plan = orch.prepare(parse_launch_spec(demo_spec_text))
    assert plan.kinds == DEMO_STEPS
    with pytest.raises(InjectedCrash):
        orch.execute(plan, crash_after=kind)
    [record] = orch.store.list()
    assert record.status == LAUNCHING
    assert record.current_step == kind
    assert [s["kind"] for s in record.steps] == DEMO_STEPS[:DEMO_STEPS.index(kind) + 1]
    assert bool(record.machine("gpu").machine_id) == (kind != "resolve")

    # a new process finds the half-launched deployment and removes it
    restarted = Orchestrator(state_dir, catalog=catalog, scale=SCALE, seed=1)
    try:
        [seen] = restarted.list_deployments()
        assert (seen.deployment_id, seen.status) == (record.deployment_id, LAUNCHING)
        assert restarted.teardown(record.deployment_id).status == DELETED
    finally:
        restarted.shutdown()
    assert list_instances(state_dir) == []


@pytest.mark.parametrize("kind", DEMO_STEPS)
def test_no_partial_cleans_up_after_any_failing_step(orch, demo_spec_text, state_dir,
                                                    monkeypatch, kind):
    def fail(*args):
        raise AgentError(f"{kind} broke")

    target = "_peer_config" if kind == "peer-config" else "_step_" + kind.replace("-", "_")
    monkeypatch.setattr(orch, target, fail)
    record = orch.execute(orch.prepare(parse_launch_spec(demo_spec_text)), no_partial=True)
    assert (record.status, record.failed_step) == (DEGRADED, kind)
    assert record.error == f"AgentError: {kind} broke"
    assert record.machine("gpu").state != READY
    assert list_instances(state_dir) == []
    assert orch.deployment(record.deployment_id).behaviors == {}


def test_teardown_stops_robot_nodes_before_cloud_nodes(orch, running, monkeypatch):
    session = orch.deployment(running.deployment_id)
    order = []
    camera = session.behavior("camera")
    stop_camera = camera.stop
    request = session.request

    def stop():
        order.append((ROBOT_MACHINE, "camera"))
        stop_camera()

    def traced(machine, op, *args, **kwargs):
        if op == "stop":
            order.append((machine, op))
        return request(machine, op, *args, **kwargs)

    monkeypatch.setattr(camera, "stop", stop)
    monkeypatch.setattr(session, "request", traced)
    orch.teardown(running.deployment_id)
    assert order == [(ROBOT_MACHINE, "camera"), ("gpu", "stop")]


def test_warm_pool_deployment(state_dir, catalog):
    text = ("name: warm\n"
            "machines:\n"
            "  - {name: gpu, backend: warm-pool, region: us-west-1, instance_type: small,"
            " image: default}\n"
            "nodes:\n"
            "  - {name: s, behavior: sink, machine: gpu, subscribes: [/x]}\n")
    orch = Orchestrator(state_dir, catalog=catalog, scale=SCALE, warm_pool_size=1)
    try:
        record = orch.execute(orch.prepare(parse_launch_spec(text)))
        assert record.status == RUNNING
        assert [p["phase"] for p in record.machine("gpu").phases] == ["schedule"]
    finally:
        orch.shutdown()


def test_store_in_memory_and_reconcile(state_dir):
    memory = StateStore()
    record = DeploymentRecord("dep-1", {"name": "x"})
    memory.save(record)
    assert memory.load("dep-1").name == "x"
    assert memory.exists("dep-1") and not memory.exists("dep-2")

    disk = StateStore(state_dir)
    record = DeploymentRecord("dep-2", {"name": "y"}, status=RUNNING,
                              machines=[MachineEntry("gpu", machine_id="mc-gone", state=READY)])
    disk.save(record)
    fixed = disk.reconcile(disk.load("dep-2"))
    assert fixed.status == DEGRADED
    assert fixed.machine("gpu").state == TERMINATED
    assert disk.load("dep-2").error == "machines gone: gpu"


def test_unknown_behavior():
    rt = PubSubRuntime("gpu")
    with pytest.raises(AgentError):
        make_behavior(rt, NodeSpec("n", "telepathy", machine="gpu"))


@pytest.fixture
def agent(tmp_path):
    a = MachineAgent("gpu", tmp_path / "agent").start()
    yield a
    a.stop()


def test_agent_refuses_launch_before_peers(agent):
    agent.op_workspace(nodes=[NodeSpec("s", "sink", machine="gpu", subscribes=("/x",)).to_dict()])
    assert (agent.workspace / "manifest.json").exists()
    with pytest.raises(MachineNotReady):
        agent.op_launch()
    agent.op_peers()
    assert agent.op_launch()["started"] == ["s"]
    assert agent.handle("exec", {"command": "nodes"})["result"] == ["s"]
    assert agent.op_stop()["stopped"] == ["s"]


def test_agent_workspace_paths_stay_inside(agent):
    with pytest.raises(AgentError):
        agent.op_workspace(files={"../evil.sh": "ZWNobw=="})
    with pytest.raises(AgentError):
        agent.handle("format-disk", {})


def test_agent_keeps_its_key(tmp_path):
    first = MachineAgent("gpu", tmp_path / "agent").start()
    second = MachineAgent("gpu", tmp_path / "agent").start()
    try:
        assert first.keypair == second.keypair
    finally:
        first.stop()
        second.stop()
