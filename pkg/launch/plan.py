"""
Deployment plans: the ordered step list the orchestrator walks.

Per cloud machine: provision -> install (default image only) -> tunnel-setup
-> workspace-copy -> peer-config. Then, once: compression-insert, monitor-start,
launch-cloud-nodes, launch-robot-nodes. Steps of one kind are grouped so the
orchestrator can run them across machines in parallel.
"""
import itertools
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from constants import DEFAULT_IMAGE, ROBOT_MACHINE
from errors import PlanningError

from .resolve import Resolution
from .spec import LaunchSpec, MachineSpec

__all__ = ["PlanStep", "DeploymentPlan", "plan_deployment", "STEP_KINDS", "MACHINE_STEPS",
           "cloud_edges"]

STEP_KINDS = ("resolve", "provision", "install", "tunnel-setup", "workspace-copy",
              "peer-config", "compression-insert", "monitor-start", "launch-cloud-nodes",
              "launch-robot-nodes")
MACHINE_STEPS = ("provision", "install", "tunnel-setup", "workspace-copy", "peer-config")


@dataclass(frozen=True)
class PlanStep:
    kind: str
    machine: Optional[str] = None
    nodes: tuple[str, ...] = ()
    detail: Mapping[str, Any] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.machine}" if self.machine else self.kind

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.machine:
            out["machine"] = self.machine
        if self.nodes:
            out["nodes"] = list(self.nodes)
        if self.detail:
            out["detail"] = dict(self.detail)
        return out


@dataclass(frozen=True)
class DeploymentPlan:
    spec: LaunchSpec
    steps: tuple[PlanStep, ...]
    resolutions: Mapping[str, Resolution] = field(default_factory=dict)
    edges: tuple[tuple[str, str], ...] = ()

    @property
    def machines(self) -> tuple[MachineSpec, ...]:
        return self.spec.machines

    @property
    def kinds(self) -> list[str]:
        return [s.kind for s in self.steps]

    def steps_for(self, machine: str) -> list[PlanStep]:
        return [s for s in self.steps if s.machine == machine]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.name,
            "machines": [m.to_dict() for m in self.spec.machines],
            "resolutions": {k: r.to_dict() for k, r in self.resolutions.items()},
            "cloud_edges": [list(e) for e in self.edges],
            "steps": [s.to_dict() for s in self.steps],
        }

    def describe(self) -> list[str]:
        lines = []
        for i, step in enumerate(self.steps, 1):
            text = f"{i:2d}. {step.label}"
            if step.nodes:
                text += f"  [{', '.join(step.nodes)}]"
            lines.append(text)
            if step.kind != "resolve":
                continue
            for name, res in self.resolutions.items():
                lines.append(f"      {name}: region={res.region} "
                             f"type={res.instance_type.type_id} image={res.image}")
                medians = res.to_dict()["probe_medians_ms"]
                if medians:
                    lines.append("        probes: " + ", ".join(
                        f"{r}={ms:.1f}ms" for r, ms in sorted(medians.items())))
        return lines


def cloud_edges(spec: LaunchSpec) -> tuple[tuple[str, str], ...]:
    """Pairs of cloud machines whose nodes exchange a topic directly (sorted, unique)."""
    edges = set()
    machines = sorted({m.name for m in spec.machines})
    for a, b in itertools.combinations(machines, 2):
        pub_a = {t for n in spec.nodes_on(a) for t in n.effective_publishes}
        pub_b = {t for n in spec.nodes_on(b) for t in n.effective_publishes}
        sub_a = {t for n in spec.nodes_on(a) for t in n.effective_subscribes}
        sub_b = {t for n in spec.nodes_on(b) for t in n.effective_subscribes}
        if pub_a & sub_b or pub_b & sub_a:
            edges.add((a, b))
    return tuple(sorted(edges))


def plan_deployment(spec: LaunchSpec,
                    resolutions: Optional[Mapping[str, Resolution]] = None) -> DeploymentPlan:
    """
    Order the launch. `spec` must already have compression applied and every AUTO bound.
    """
    resolutions = dict(resolutions or {})
    for m in spec.machines:
        if m.unresolved:
            raise PlanningError(f"machine {m.name}: unresolved {', '.join(m.unresolved)}")
    for n in spec.nodes:
        if n.machine != ROBOT_MACHINE and n.machine not in {m.name for m in spec.machines}:
            raise PlanningError(f"node {n.name} is bound to unknown machine {n.machine}")

    robot_nodes = tuple(n.name for n in spec.robot_nodes)
    cloud_nodes = tuple(n.name for n in spec.cloud_nodes)
    if not spec.machines:
        steps = []
        if spec.monitor is not None:
            steps.append(PlanStep("monitor-start", ROBOT_MACHINE,
                                  detail={"port": spec.monitor.port}))
        steps.append(PlanStep("launch-robot-nodes", ROBOT_MACHINE, robot_nodes))
        return DeploymentPlan(spec, tuple(steps), resolutions, ())

    machines = sorted(spec.machines, key=lambda m: m.name)
    edges = cloud_edges(spec)
    steps = [PlanStep("resolve")]
    for kind in MACHINE_STEPS:
        for m in machines:
            if kind == "install" and m.image != DEFAULT_IMAGE:
                continue    # pre-built image: install skipped
            detail: dict[str, Any] = {}
            if kind == "provision":
                detail = {"backend": m.backend, "region": m.region,
                          "instance_type": m.instance_type, "image": m.image}
            elif kind == "workspace-copy":
                detail = {"nodes": [n.name for n in spec.nodes_on(m.name)]}
            elif kind == "peer-config":
                detail = {"peers": [ROBOT_MACHINE] + sorted(
                    {b if a == m.name else a for a, b in edges if m.name in (a, b)})}
            steps.append(PlanStep(kind, m.name, detail=detail))
    if spec.compression_directives:
        steps.append(PlanStep("compression-insert", detail={
            "topics": {t: mode for t, mode in spec.compression_directives}}))
    if spec.monitor is not None:
        steps.append(PlanStep("monitor-start", ROBOT_MACHINE, detail={"port": spec.monitor.port}))
    steps.append(PlanStep("launch-cloud-nodes", nodes=cloud_nodes))
    steps.append(PlanStep("launch-robot-nodes", ROBOT_MACHINE, robot_nodes))
    return DeploymentPlan(spec, tuple(steps), resolutions, edges)
