import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from errors import ProvisionError

__all__ = ["InstanceType", "PhaseSpan", "MachineHandle", "ImageRecord", "PROVISIONING",
           "INSTALLING", "READY", "TERMINATED", "STATES"]

PROVISIONING = "provisioning"
INSTALLING = "installing"
READY = "ready"
TERMINATED = "terminated"
STATES = (PROVISIONING, INSTALLING, READY, TERMINATED)


@dataclass(frozen=True)
class InstanceType:
    type_id: str
    cpu_cores: int
    memory: int          # MiB
    gpu_units: int
    price: float         # per hour

    def __post_init__(self):
        if self.price <= 0:
            raise ValueError(f"{self.type_id}: price must be > 0")
        if self.cpu_cores < 1:
            raise ValueError(f"{self.type_id}: cpu_cores must be >= 1")
        if self.memory < 0 or self.gpu_units < 0:
            raise ValueError(f"{self.type_id}: memory and gpu_units must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PhaseSpan:
    phase: str
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(eq=False)
class MachineHandle:
    """
    One provisioned machine. State only moves forward:
    provisioning -> installing -> ready -> terminated (terminated is reachable from any state).
    """

    machine_id: str
    backend: str
    region: str
    instance_type: str = ""
    image: str = "default"
    state: str = PROVISIONING
    endpoint: Optional[tuple] = None
    public_key: str = ""
    boot_timeline: list[PhaseSpan] = field(default_factory=list)
    deployment_id: str = ""
    machine: str = ""
    pid: Optional[int] = None
    agent_mode: str = "thread"
    owner_pid: Optional[int] = None
    created_at: float = field(default_factory=time.time)
    agent: Any = field(default=None, repr=False)

    def __post_init__(self):
        self._lock = threading.Lock()

    def advance(self, state: str) -> None:
        with self._lock:
            if state not in STATES:
                raise ProvisionError(f"unknown machine state {state!r}")
            if state == self.state:
                return
            if state != TERMINATED and STATES.index(state) < STATES.index(self.state):
                raise ProvisionError(f"{self.machine_id}: cannot go from {self.state} to {state}")
            if self.state == TERMINATED:
                raise ProvisionError(f"{self.machine_id} is terminated")
            self.state = state

    def record_phase(self, phase: str, start: float, end: float) -> PhaseSpan:
        with self._lock:
            if end < start:
                raise ProvisionError(f"phase {phase} ends before it starts")
            if self.boot_timeline and start < self.boot_timeline[-1].end:
                raise ProvisionError(f"phase {phase} overlaps {self.boot_timeline[-1].phase}")
            span = PhaseSpan(phase, start, end)
            self.boot_timeline.append(span)
            return span

    @property
    def startup_s(self) -> float:
        if not self.boot_timeline:
            return 0.0
        return self.boot_timeline[-1].end - self.boot_timeline[0].start

    @property
    def is_live(self) -> bool:
        return self.state != TERMINATED

    def to_dict(self) -> dict:
        return {
            "machine_id": self.machine_id,
            "backend": self.backend,
            "region": self.region,
            "instance_type": self.instance_type,
            "image": self.image,
            "state": self.state,
            "endpoint": list(self.endpoint) if self.endpoint else None,
            "public_key": self.public_key,
            "boot_timeline": [[p.phase, p.start, p.end] for p in self.boot_timeline],
            "deployment_id": self.deployment_id,
            "machine": self.machine,
            "pid": self.pid,
            "agent_mode": self.agent_mode,
            "owner_pid": self.owner_pid,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MachineHandle":
        data = dict(data)
        timeline = [PhaseSpan(*p) for p in data.pop("boot_timeline", [])]
        endpoint = data.pop("endpoint", None)
        return cls(**data, endpoint=tuple(endpoint) if endpoint else None, boot_timeline=timeline)


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    backend: str
    region: str
    capability_tags: frozenset = frozenset()
    created_at: float = 0.0
    preinstalled: bool = True
    base: str = "default"
    manifest: tuple = ()

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "backend": self.backend,
            "region": self.region,
            "capability_tags": sorted(self.capability_tags),
            "created_at": self.created_at,
            "preinstalled": self.preinstalled,
            "base": self.base,
            "manifest": list(self.manifest),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ImageRecord":
        return cls(
            image_id=data["image_id"],
            backend=data["backend"],
            region=data["region"],
            capability_tags=frozenset(data.get("capability_tags", ())),
            created_at=float(data.get("created_at", 0.0)),
            preinstalled=bool(data.get("preinstalled", True)),
            base=data.get("base", "default"),
            manifest=tuple(data.get("manifest", ())),
        )
