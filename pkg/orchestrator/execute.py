"""
Deployment execution: walk a DeploymentPlan step group by step group, drive the backends
and the machine agents, and keep the deployment record current.

    orch = Orchestrator(state_dir, scale=0.01)
    plan = orch.prepare(parse_launch_spec(text))
    record = orch.execute(plan)
    orch.health_snapshot(record.deployment_id)
    orch.teardown(record.deployment_id)

A failing step leaves the deployment degraded (not raised) with the failed step recorded.
The record is persisted after every step group, so a crash leaves at most one group of
unrecorded work behind.
"""
import base64
import itertools
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Optional

from constants import (CONTROL_TIMEOUT_S, DEFAULT_SCALE, HEARTBEAT_TIMEOUT_S,
                       LAUNCH_WAIT_TIMEOUT_S, ROBOT_MACHINE)
from core.clock import MonotonicClock
from errors import (AgentError, DeploymentError, FogError, InjectedCrash, MachineNotReady,
                    UnknownMachine)
from launch.compression import insert_compression_nodes
from launch.plan import DeploymentPlan, PlanStep, plan_deployment
from launch.resolve import resolve_spec
from launch.spec import LaunchSpec, NodeSpec
from logger import log_event
from overlay.addressing import assign_overlay_addresses, operator_address
from overlay.endpoint import OverlayEndpoint
from overlay.keys import KeyPair, b64, generate_keypair, unb64
from overlay.transport import UdpTransport
from provision.backend import Backend, make_backend
from provision.catalog import ProviderCatalog, builtin_catalog
from provision.images import ImageRegistry
from provision.inventory import pid_alive
from provision.types import READY, TERMINATED, MachineHandle
from pubsub.runtime import PubSubRuntime

from .behaviors import Behavior, make_behavior
from .control import ControlClient
from .record import DEGRADED, DELETED, RUNNING, DeploymentRecord, MachineEntry
from .store import StateStore

__all__ = ["Orchestrator", "Deployment", "ControlSession"]

log = logging.getLogger(__name__)

_DROP_COUNTERS = ("delivery_failed", "reassembly_dropped", "send_errors", "out_of_order",
                  "malformed", "duplicates")


class Deployment:
    """The live side of a deployment launched by this process: robot runtime, agents, nodes."""

    def __init__(self, record: DeploymentRecord, plan: DeploymentPlan, robot_keys: KeyPair,
                 operator_keys: KeyPair, *, host: str, workdir: Path, workspace_src: Path):
        self.record = record
        self.plan = plan
        self.robot_keys = robot_keys
        self.operator_keys = operator_keys
        self.workdir = workdir
        self.workspace_src = workspace_src
        self.transport = UdpTransport(host)
        self.endpoint = OverlayEndpoint(robot_keys, self.transport, name=ROBOT_MACHINE)
        self.robot = PubSubRuntime(ROBOT_MACHINE, self.endpoint, dispatch="thread")
        self.robot.start()
        self.control = ControlClient(self.robot)
        self.handles: dict[str, MachineHandle] = {}
        self.behaviors: dict[str, Behavior] = {}
        self.bridge = None
        self.closed = False

    @property
    def deployment_id(self) -> str:
        return self.record.deployment_id

    def peer_key(self, machine: str) -> bytes:
        entry = self.record.machine(machine)
        if not entry.public_key:
            raise MachineNotReady(f"{machine} has no agent")
        return unb64(entry.public_key)

    def request(self, machine: str, op: str, timeout: float = CONTROL_TIMEOUT_S, **args):
        return self.control.request(self.peer_key(machine), op, timeout=timeout, **args)

    def behavior(self, name: str) -> Behavior:
        return self.behaviors[name]

    def stop_nodes(self) -> None:
        """Stop robot nodes in reverse launch order, then the monitor bridge."""
        for name in reversed(list(self.behaviors)):
            try:
                self.behaviors.pop(name).stop()
            except Exception:
                log.exception("stopping robot node %s failed", name)
        if self.bridge is not None:
            self.bridge.stop()
            self.bridge = None

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.stop_nodes()
        self.robot.close()
        self.endpoint.close()


class ControlSession:
    """
    Interactive session with one machine's agent.

    Usage:
        with orch.attach(deployment_id, "slam") as session:
            print(session.execute("status"))
    """

    def __init__(self, client: ControlClient, peer: bytes, machine: str,
                 owned: Optional[Callable[[], None]] = None):
        self.client = client
        self.peer = peer
        self.machine = machine
        self._owned = owned

    def execute(self, command, timeout: float = CONTROL_TIMEOUT_S) -> dict:
        return self.client.request(self.peer, "exec", timeout=timeout, command=command)

    def status(self) -> dict:
        return self.client.request(self.peer, "status")

    def close(self) -> None:
        self.client.close()
        if self._owned is not None:
            self._owned()
            self._owned = None

    def __enter__(self) -> "ControlSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class Orchestrator:
    def __init__(
        self,
        state_dir: Optional[Path] = None,
        *,
        catalog: Optional[ProviderCatalog] = None,
        scale: float = DEFAULT_SCALE,
        agent_mode: str = "thread",
        seed: int = 0,
        profile: Optional[str] = None,
        robot_host: str = "127.0.0.1",
        warm_pool_size: int = 0,
        max_workers: int = 8,
    ):
        self.state_dir = Path(state_dir) if state_dir else None
        self.catalog = catalog or builtin_catalog()
        self.scale = scale
        self.agent_mode = agent_mode
        self.seed = seed
        self.profile = profile
        self.robot_host = robot_host
        self.warm_pool_size = warm_pool_size
        self.max_workers = max_workers
        self.clock = MonotonicClock()
        self.store = StateStore(self.state_dir)
        self.images = ImageRegistry(self.state_dir / "images.json" if self.state_dir else None)
        self.sessions: dict[str, Deployment] = {}
        self._backends: dict[str, Backend] = {}
        self._lock = threading.RLock()

    # --- backends -----------------------------------------------------------

    def backend(self, name: str) -> Backend:
        with self._lock:
            backend = self._backends.get(name)
            if backend is None:
                backend = make_backend(name, self.catalog, images=self.images,
                                       state_dir=self.state_dir, scale=self.scale,
                                       seed=self.seed, agent_mode=self.agent_mode,
                                       profile=self.profile)
                if self.warm_pool_size and hasattr(backend, "warm_pool_configure"):
                    backend.warm_pool_configure(self.warm_pool_size)
                self._backends[name] = backend
            return backend

    def _probe(self, backend: str) -> dict[str, list[float]]:
        return self.backend(backend).probe_all()

    # --- planning -----------------------------------------------------------

    def prepare(self, spec: LaunchSpec) -> DeploymentPlan:
        """Insert compression nodes, bind every AUTO field and order the launch."""
        spec = insert_compression_nodes(spec.validate())
        resolved, resolutions = resolve_spec(spec, self.catalog.instance_types, self.images,
                                             self._probe)
        return plan_deployment(resolved, resolutions)

    # --- execution ----------------------------------------------------------

    def _new_record(self, plan: DeploymentPlan) -> DeploymentRecord:
        spec = plan.spec
        addresses = assign_overlay_addresses([m.name for m in plan.machines])
        record = DeploymentRecord(
            deployment_id=self.store.new_id(), spec=spec.to_dict(), seed=self.seed,
            bindings={n.name: n.machine for n in spec.nodes},
            plan=[s.to_dict() for s in plan.steps],
            resolutions={k: r.to_dict() for k, r in plan.resolutions.items()},
            cloud_edges=[list(e) for e in plan.edges], owner_pid=os.getpid())
        record.robot.overlay_address = str(addresses[ROBOT_MACHINE])
        for m in plan.machines:
            record.machines.append(MachineEntry(
                m.name, backend=m.backend, region=m.region, instance_type=str(m.instance_type),
                image=m.image, overlay_address=str(addresses[m.name])))
        return record

    def execute(self, plan: DeploymentPlan, *, no_partial: bool = False,
                crash_after: Optional[str] = None,
                workspace: Optional[Path] = None) -> DeploymentRecord:
        """
        Run the plan. Returns the record; a failing step leaves it degraded.

        Args:
            no_partial: tear down already-provisioned machines when a step fails
            crash_after: raise InjectedCrash right after this step kind is recorded
            workspace: directory custom-executable paths are relative to
        """
        record = self._new_record(plan)
        robot_keys, operator_keys = generate_keypair(), generate_keypair()
        self.store.save_key(record.deployment_id, ROBOT_MACHINE, robot_keys)
        self.store.save_key(record.deployment_id, "operator", operator_keys)
        record.operator_public = b64(operator_keys.public)
        workdir = (self.state_dir / "robot" / record.deployment_id if self.state_dir
                   else Path(tempfile.mkdtemp(prefix=f"fog-{record.deployment_id}-")))
        session = Deployment(record, plan, robot_keys, operator_keys, host=self.robot_host,
                             workdir=workdir,
                             workspace_src=Path(workspace) if workspace else Path.cwd())
        record.robot.public_key = b64(robot_keys.public)
        record.robot.endpoint = tuple(session.transport.address)
        record.robot.state = READY
        self.sessions[record.deployment_id] = session
        self.store.save(record)
        log_event("deployment_started", deployment_id=record.deployment_id, name=record.name,
                  machines=[m.name for m in plan.machines])
        log.info("deployment %s: %d step(s)", record.deployment_id, len(plan.steps))

        for kind, group in itertools.groupby(plan.steps, key=lambda s: s.kind):
            steps = list(group)
            record.current_step = kind
            start = self.clock.now()
            try:
                self._run_group(session, kind, steps)
            except Exception as e:
                self._fail(session, kind, e, no_partial)
                return record
            record.steps.append({"kind": kind, "start": start, "end": self.clock.now(),
                                 "machines": [s.machine for s in steps if s.machine]})
            self.store.save(record)
            if crash_after == kind:
                raise InjectedCrash(kind)

        record.status = RUNNING
        record.current_step = ""
        self.store.save(record)
        log_event("deployment_running", deployment_id=record.deployment_id,
                  launch_s=round(record.launch_s, 4), steps=record.step_durations())
        return record

    def _fail(self, session: Deployment, kind: str, error: Exception, no_partial: bool) -> None:
        record = session.record
        record.status = DEGRADED
        record.failed_step = kind
        record.error = f"{type(error).__name__}: {error}"
        log.error("deployment %s: step %s failed: %s", record.deployment_id, kind, error)
        log_event("deployment_degraded", deployment_id=record.deployment_id, step=kind,
                  error=record.error)
        if no_partial:
            self._destroy_machines(session.record, session)
        self.store.save(record)

    def _run_group(self, session: Deployment, kind: str, steps: list[PlanStep]) -> None:
        if kind == "peer-config":
            self._peer_config(session, steps)
            return
        handler = getattr(self, "_step_" + kind.replace("-", "_"))
        if len(steps) == 1:
            handler(session, steps[0])
            return
        workers = min(self.max_workers, len(steps))
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix=f"fog-{kind}") as pool:
            futures = [pool.submit(handler, session, step) for step in steps]
            errors = [f.exception() for f in futures]
        self.store.save(session.record)
        failed = [e for e in errors if e is not None]
        if failed:
            raise failed[0]

    # --- steps ----------------------------------------------------------------

    def _step_resolve(self, session: Deployment, step: PlanStep) -> None:
        for name, res in session.plan.resolutions.items():
            log.info("%s: region %s, type %s, image %s", name, res.region,
                     res.instance_type.type_id, res.image)

    def _step_provision(self, session: Deployment, step: PlanStep) -> None:
        machine = session.plan.spec.machine(step.machine)
        backend = self.backend(machine.backend)
        handle = backend.create_instance(
            machine.region, machine.instance_type, machine.image,
            deployment_id=session.deployment_id, machine=machine.name,
            authorized=[session.robot_keys.public, session.operator_keys.public])
        session.handles[machine.name] = handle
        entry = session.record.machine(machine.name)
        entry.update_from(handle)
        if handle.agent is None:
            raise MachineNotReady(f"{machine.name}: backend started no agent")

    def _step_install(self, session: Deployment, step: PlanStep) -> None:
        handle = session.handles[step.machine]
        phases = [p.phase for p in handle.boot_timeline]
        if "install" not in phases:
            raise DeploymentError(f"{step.machine}: default image but no install phase ran")

    def _step_tunnel_setup(self, session: Deployment, step: PlanStep) -> None:
        handle = session.handles[step.machine]
        backend = self.backend(handle.backend)
        session.transport.shape(handle.endpoint, backend.link_for(handle.region))
        session.endpoint.connect(unb64(handle.public_key), tuple(handle.endpoint))
        session.robot.wait_until(
            lambda: session.robot.peers.get(unb64(handle.public_key)) is not None,
            LAUNCH_WAIT_TIMEOUT_S)

    def _workspace_files(self, session: Deployment, nodes: Iterable[NodeSpec]) -> dict[str, str]:
        files = {}
        for node in nodes:
            if node.behavior != "custom-executable":
                continue
            rel = str(node.params.get("path", ""))
            src = session.workspace_src / rel
            if not rel or Path(rel).is_absolute() or not src.is_file():
                raise DeploymentError(f"{node.name}: executable {rel!r} not found in "
                                      f"{session.workspace_src}")
            files[rel] = base64.b64encode(src.read_bytes()).decode()
        return files

    def _step_workspace_copy(self, session: Deployment, step: PlanStep) -> None:
        nodes = session.plan.spec.nodes_on(step.machine)
        result = session.request(step.machine, "workspace",
                                 files=self._workspace_files(session, nodes),
                                 nodes=[n.to_dict() for n in nodes])
        log.info("%s: workspace copied (%d file(s), %d node(s))", step.machine, result["files"],
                 len(result["nodes"]))

    def _peer_config(self, session: Deployment, steps: list[PlanStep]) -> None:
        """Authorize every cloud-to-cloud edge on both ends first, then connect."""
        record = session.record

        def peer(name: str) -> dict:
            entry = record.machine(name)
            return {"public_key": entry.public_key, "endpoint": list(entry.endpoint)}

        for step in steps:
            others = [p for p in step.detail.get("peers", []) if p != ROBOT_MACHINE]
            session.request(step.machine, "peers", authorize=[peer(p) for p in others])

        def connect(step: PlanStep) -> None:
            # the lexically smaller name initiates
            targets = [p for p in step.detail.get("peers", [])
                       if p != ROBOT_MACHINE and step.machine < p]
            session.request(step.machine, "peers", connect=[peer(p) for p in targets])

        with ThreadPoolExecutor(max_workers=min(self.max_workers, len(steps)),
                                thread_name_prefix="fog-peer-config") as pool:
            errors = [f.exception() for f in [pool.submit(connect, s) for s in steps]]
        failed = [e for e in errors if e is not None]
        if failed:
            raise failed[0]

    def _step_compression_insert(self, session: Deployment, step: PlanStep) -> None:
        inserted = [n.name for n in session.plan.spec.nodes
                    if n.behavior in ("stream-encoder", "stream-decoder")]
        log.info("compression nodes: %s", ", ".join(inserted) or "none")

    def _step_monitor_start(self, session: Deployment, step: PlanStep) -> None:
        from monitor.bridge import start_bridge

        try:
            session.bridge = start_bridge(session.plan.spec.monitor, session.robot,
                                          host=self.robot_host)
        except (OSError, FogError) as e:
            # observer only: the deployment goes on without it
            log.warning("monitor bridge did not start: %s", e)
            return
        session.record.monitor_url = session.bridge.url

    def _step_launch_cloud_nodes(self, session: Deployment, step: PlanStep) -> None:
        spec = session.plan.spec
        machines = sorted({n.machine for n in spec.cloud_nodes})
        if machines:
            with ThreadPoolExecutor(max_workers=min(self.max_workers, len(machines)),
                                    thread_name_prefix="fog-launch") as pool:
                futures = [pool.submit(session.request, m, "launch") for m in machines]
                errors = [f.exception() for f in futures]
            failed = [e for e in errors if e is not None]
            if failed:
                raise failed[0]
        robot_out = {t for n in spec.robot_nodes for t in n.effective_publishes}
        cloud_in = {t for n in spec.cloud_nodes for t in n.effective_subscribes}
        wanted = robot_out & cloud_in
        if wanted and not session.robot.wait_for_remote_topics(wanted, LAUNCH_WAIT_TIMEOUT_S):
            missing = wanted - session.robot.peers.remote_topics(session.robot.clock.now())
            raise DeploymentError(f"cloud subscriptions never announced: {sorted(missing)}")

    def _step_launch_robot_nodes(self, session: Deployment, step: PlanStep) -> None:
        nodes = session.plan.spec.robot_nodes
        files = self._workspace_files(session, nodes)
        for rel, data in files.items():
            target = session.workdir / "workspace" / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(base64.b64decode(data))
        for node in nodes:
            behavior = make_behavior(session.robot, node, workdir=session.workdir)
            behavior.start()
            session.behaviors[node.name] = behavior
        session.robot.announce()
        log_event("nodes_launched", machine=ROBOT_MACHINE, nodes=[n.name for n in nodes])

    # --- lifecycle ----------------------------------------------------------

    def deployment(self, deployment_id: str) -> Deployment:
        session = self.sessions.get(deployment_id)
        if session is None:
            self.store.load(deployment_id)
            raise DeploymentError(f"deployment {deployment_id} is not live in this process")
        return session

    def list_deployments(self) -> list[DeploymentRecord]:
        return [self.store.reconcile(r) for r in self.store.list()]

    def _destroy_machines(self, record: DeploymentRecord, session: Optional[Deployment]) -> None:
        """Reverse of launch: robot nodes stop first, then cloud nodes, then the machines."""
        if session is not None:
            session.stop_nodes()
            for entry in reversed(record.machines):
                if entry.state == READY and entry.public_key:
                    try:
                        session.request(entry.name, "stop", timeout=2.0)
                    except FogError as e:
                        log.debug("%s: stop before teardown failed: %s", entry.name, e)
        for entry in record.machines:
            if not entry.machine_id or entry.state == TERMINATED:
                continue
            backend = self.backend(entry.backend)
            handle = session.handles.get(entry.name) if session is not None else None
            try:
                backend.destroy_instance(handle or backend.get_instance(entry.machine_id))
            except UnknownMachine:
                log.debug("%s: already gone", entry.machine_id)
            entry.state = TERMINATED

    def teardown(self, deployment_id: str) -> DeploymentRecord:
        """Destroy every machine of a deployment. Tearing down twice is a no-op."""
        record = self.store.load(deployment_id)
        if record.status == DELETED:
            return record
        session = self.sessions.pop(deployment_id, None)
        if session is not None:
            record = session.record
        self._destroy_machines(record, session)
        if session is not None:
            session.close()
        record.status = DELETED
        record.current_step = ""
        record.deleted_at = time.time()
        self.store.save(record)
        self.store.delete_keys(deployment_id)
        log_event("deployment_deleted", deployment_id=deployment_id)
        return record

    def health_snapshot(self, deployment_id: str) -> dict:
        record = self.store.load(deployment_id)
        if record.status == DELETED:
            return {"deployment_id": deployment_id, "status": DELETED, "machines": {}, "nodes": {}}
        session = self.sessions.get(deployment_id)
        if session is not None:
            record = session.record
        else:
            record = self.store.reconcile(record)
        machines, nodes = {}, {}
        healthy = record.status == RUNNING
        now = session.robot.clock.now() if session else 0.0
        for entry in record.machines:
            info: dict = {"state": entry.state, "alive": False, "heartbeat_age_s": None}
            handle = session.handles.get(entry.name) if session else None
            if entry.state == READY:
                if handle is not None and handle.agent is not None:
                    info["alive"] = handle.agent.alive()
                else:
                    info["alive"] = pid_alive(entry.pid or record.owner_pid)
            if session is not None and entry.public_key:
                peer = session.robot.peers.get(unb64(entry.public_key))
                if peer is not None:
                    age = now - peer.refreshed_at
                    info["heartbeat_age_s"] = round(age, 3)
                    info["alive"] = info["alive"] and age < HEARTBEAT_TIMEOUT_S
                    for name in peer.nodes:
                        if record.bindings.get(name) == entry.name:
                            nodes[name] = {"machine": entry.name, "alive": info["alive"]}
            healthy = healthy and info["alive"]
            machines[entry.name] = info
        for name, machine in record.bindings.items():
            if machine == ROBOT_MACHINE:
                behavior = session.behaviors.get(name) if session else None
                nodes[name] = {"machine": ROBOT_MACHINE,
                               "alive": bool(behavior is not None and behavior.running)}
            else:
                nodes.setdefault(name, {"machine": machine, "alive": False})
        status = record.status
        if status == RUNNING and not healthy:
            status = DEGRADED
            record.status = DEGRADED
            record.error = "agent heartbeat lost: " + ", ".join(
                n for n, i in machines.items() if not i["alive"])
            self.store.save(record)
            log_event("deployment_degraded", deployment_id=deployment_id, error=record.error)
        drops = {}
        if session is not None:
            metrics = session.robot.metrics()
            drops = {k: metrics.get(k, 0) for k in _DROP_COUNTERS}
        return {"deployment_id": deployment_id, "status": status, "machines": machines,
                "nodes": nodes, "drops": drops}

    def attach(self, deployment_id: str, machine: str) -> ControlSession:
        """Open a control session with one machine's agent."""
        record = self.store.load(deployment_id)
        if record.status == DELETED:
            raise MachineNotReady(f"deployment {deployment_id} is deleted")
        entry = record.machine(machine)
        if entry.state != READY or not entry.public_key or not entry.endpoint:
            raise MachineNotReady(f"{machine} is {entry.state or 'not provisioned'}")
        peer = unb64(entry.public_key)
        session = self.sessions.get(deployment_id)
        node = f"fog-attach-{os.urandom(3).hex()}"
        if session is not None:
            return ControlSession(ControlClient(session.robot, node), peer, machine)

        keys = self.store.load_key(deployment_id, "operator")
        if keys is None:
            raise MachineNotReady(f"no operator key for {deployment_id}")
        endpoint = OverlayEndpoint(keys, UdpTransport(self.robot_host),
                                   name=operator_address().machine)
        runtime = PubSubRuntime(operator_address().machine, endpoint, dispatch="thread")
        runtime.start()

        def close():
            runtime.close()
            endpoint.close()

        try:
            endpoint.connect(peer, tuple(entry.endpoint))
        except FogError as e:
            close()
            raise AgentError(f"{machine}: agent unreachable: {e}") from e
        return ControlSession(ControlClient(runtime, node), peer, machine, owned=close)

    def close(self) -> None:
        """Stop this process's robot runtimes. Machines and their agents stay up."""
        for session in list(self.sessions.values()):
            session.close()
        self.sessions.clear()

    def shutdown(self) -> None:
        """close(), then destroy every machine the backends of this process created."""
        self.close()
        for backend in self._backends.values():
            backend.close()
        self._backends.clear()

