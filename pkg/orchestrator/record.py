"""
Deployment records: what was launched where, how long each step took, and how it ended.
Records are plain JSON documents; secret keys are never part of them.
"""
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from constants import ROBOT_MACHINE
from errors import UnknownMachine
from provision.types import MachineHandle

__all__ = ["LAUNCHING", "RUNNING", "DEGRADED", "DELETED", "STATUSES", "MachineEntry",
           "DeploymentRecord"]

LAUNCHING = "launching"
RUNNING = "running"
DEGRADED = "degraded"
DELETED = "deleted"
STATUSES = (LAUNCHING, RUNNING, DEGRADED, DELETED)


@dataclass
class MachineEntry:
    name: str
    backend: str = ""
    region: str = ""
    instance_type: str = ""
    image: str = ""
    machine_id: str = ""
    state: str = ""
    public_key: str = ""
    overlay_address: str = ""
    endpoint: Optional[tuple] = None
    pid: Optional[int] = None
    agent_mode: str = ""
    phases: list[dict] = field(default_factory=list)

    @property
    def startup_s(self) -> float:
        if not self.phases:
            return 0.0
        return self.phases[-1]["end"] - self.phases[0]["start"]

    def update_from(self, handle: MachineHandle) -> None:
        self.machine_id = handle.machine_id
        self.backend = handle.backend
        self.region = handle.region
        self.instance_type = handle.instance_type
        self.image = handle.image
        self.state = handle.state
        self.public_key = handle.public_key
        self.endpoint = tuple(handle.endpoint) if handle.endpoint else None
        self.pid = handle.pid
        self.agent_mode = handle.agent_mode
        self.phases = [{"phase": p.phase, "start": p.start, "end": p.end}
                       for p in handle.boot_timeline]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["endpoint"] = list(self.endpoint) if self.endpoint else None
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MachineEntry":
        data = dict(data)
        if data.get("endpoint"):
            data["endpoint"] = tuple(data["endpoint"])
        return cls(**data)


@dataclass
class DeploymentRecord:
    deployment_id: str
    spec: dict
    status: str = LAUNCHING
    machines: list[MachineEntry] = field(default_factory=list)
    robot: MachineEntry = field(default_factory=lambda: MachineEntry(ROBOT_MACHINE))
    operator_public: str = ""
    bindings: dict[str, str] = field(default_factory=dict)
    plan: list[dict] = field(default_factory=list)
    resolutions: dict[str, Any] = field(default_factory=dict)
    cloud_edges: list[list[str]] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    current_step: str = ""
    failed_step: str = ""
    error: str = ""
    seed: int = 0
    monitor_url: str = ""
    owner_pid: Optional[int] = None
    created_at: float = field(default_factory=time.time)
    updated_at: float = 0.0
    deleted_at: Optional[float] = None

    @property
    def name(self) -> str:
        return self.spec.get("name", "")

    def machine(self, name: str) -> MachineEntry:
        if name == ROBOT_MACHINE:
            return self.robot
        for m in self.machines:
            if m.name == name:
                return m
        raise UnknownMachine(f"deployment {self.deployment_id} has no machine {name!r}")

    def has_machine(self, name: str) -> bool:
        return any(m.name == name for m in self.machines)

    @property
    def launch_s(self) -> float:
        if not self.steps:
            return 0.0
        return self.steps[-1]["end"] - self.steps[0]["start"]

    def step_durations(self) -> dict[str, float]:
        return {s["kind"]: round(s["end"] - s["start"], 6) for s in self.steps}

    def summary(self) -> dict:
        return {
            "deployment_id": self.deployment_id,
            "name": self.name,
            "status": self.status,
            "machines": len(self.machines),
            "nodes": len(self.bindings),
            "created_at": self.created_at,
            "failed_step": self.failed_step or None,
        }

    def to_dict(self) -> dict:
        out = asdict(self)
        out["machines"] = [m.to_dict() for m in self.machines]
        out["robot"] = self.robot.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DeploymentRecord":
        data = dict(data)
        data["machines"] = [MachineEntry.from_dict(m) for m in data.get("machines", [])]
        data["robot"] = MachineEntry.from_dict(data.get("robot") or {"name": ROBOT_MACHINE})
        return cls(**data)
