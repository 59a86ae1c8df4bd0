"""
Provider interface shared by every backend, plus the backend registry.

A backend creates machines (running one agent each), destroys them, lists what it believes
is running, probes region round trips and builds images. A real provider adapter implements
the same abstract methods and registers itself with register_backend().
"""
import base64
import logging
import os
import random
import secrets
import tempfile
import threading
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from constants import DEFAULT_IMAGE, DEFAULT_SCALE, MOCK_JITTER_S, PROBE_JITTER_MS, PROBE_SAMPLES
from core.clock import Clock, MonotonicClock
from errors import ProvisionError, UnknownBackend, UnknownImage, UnknownMachine, UnknownRegion
from logger import log_event

from .catalog import ProviderCatalog, builtin_catalog
from .images import ImageRegistry
from .inventory import Inventory
from .link import LinkModel
from .spawn import AGENT_MODES, AgentProcess, kill_pid
from .types import READY, TERMINATED, ImageRecord, InstanceType, MachineHandle

__all__ = ["Backend", "BACKENDS", "register_backend", "make_backend"]

log = logging.getLogger(__name__)


class Backend(ABC):
    """
    Usage:
        backend = make_backend("mock-cloud", catalog, state_dir=state_dir, scale=0.01)
        handle = backend.create_instance("us-west-1", "small", authorized=[robot_public])
        backend.destroy_instance(handle)
    """

    name = ""
    id_prefix = "m"

    def __init__(
        self,
        catalog: Optional[ProviderCatalog] = None,
        *,
        images: Optional[ImageRegistry] = None,
        state_dir: Optional[Path] = None,
        scale: float = DEFAULT_SCALE,
        clock: Optional[Clock] = None,
        seed: int = 0,
        agent_mode: str = "thread",
        profile: Optional[str] = None,
        jitter: float = MOCK_JITTER_S,
    ):
        if scale <= 0:
            raise ValueError("scale must be > 0")
        if agent_mode not in AGENT_MODES:
            raise ValueError(f"agent_mode must be one of {AGENT_MODES}")
        self.catalog = catalog or builtin_catalog()
        self.state_dir = Path(state_dir) if state_dir else None
        self.images = images or ImageRegistry(self.state_dir / "images.json" if self.state_dir else None)
        self.scale = scale
        self.delays = self.catalog.delays.scaled(scale)
        self.clock = clock or MonotonicClock()
        self.seed = seed
        self.agent_mode = agent_mode
        self.profile = profile
        self.jitter = jitter
        self.inventory = Inventory(self.state_dir, self.name)
        self._rng = random.Random(seed)
        self._rng_lock = threading.Lock()
        self._lock = threading.RLock()
        self._handles: dict[str, MachineHandle] = {}

    # --- catalog ----------------------------------------------------------

    def regions(self) -> list[str]:
        return self.catalog.regions_for(self.name)

    def _check_region(self, region: str) -> None:
        if region not in self.regions():
            raise UnknownRegion(f"{self.name} has no region {region!r} "
                                f"(known: {', '.join(self.regions()) or 'none'})")

    def _instance_type(self, instance_type: Union[str, InstanceType]) -> InstanceType:
        if isinstance(instance_type, InstanceType):
            return self.catalog.instance_type(instance_type.type_id)
        return self.catalog.instance_type(instance_type)

    def link_for(self, region: str) -> LinkModel:
        return self.catalog.link_for(region, self.profile)

    def _draw(self, fn: Callable[[random.Random], float]) -> float:
        with self._rng_lock:
            return fn(self._rng)

    def probe_region(self, region: str, samples: int = PROBE_SAMPLES) -> list[float]:
        """Round-trip samples (ms) from the robot's location to `region`."""
        self._check_region(region)
        rtt = self.catalog.rtt_ms(region, self.profile)
        return [max(0.01, rtt + self._draw(lambda r: r.uniform(-PROBE_JITTER_MS, PROBE_JITTER_MS)))
                for _ in range(samples)]

    def probe_all(self, samples: int = PROBE_SAMPLES) -> dict[str, list[float]]:
        profile = self.catalog.profile(self.profile)
        return {r: self.probe_region(r, samples) for r in self.regions() if r in profile}

    # --- phases -----------------------------------------------------------

    def _timed(self, handle: MachineHandle, phase: str, seconds: float,
               work: Optional[Callable[[], None]] = None) -> None:
        """Run `work`, then wait out the rest of the phase's configured delay."""
        start = self.clock.now()
        if work is not None:
            work()
        remaining = seconds - (self.clock.now() - start)
        jitter = self._draw(lambda r: r.uniform(0.0, self.jitter)) if self.jitter > 0 else 0.0
        self.clock.sleep(max(0.0, remaining) + jitter)
        handle.record_phase(phase, start, self.clock.now())

    def _workdir(self, machine_id: str) -> Path:
        if self.state_dir is not None:
            return self.state_dir / "machines" / machine_id
        return Path(tempfile.mkdtemp(prefix=f"fog-{machine_id}-"))

    def _spawn_agent(self, handle: MachineHandle) -> None:
        if self.agent_mode == "none":
            return
        agent = AgentProcess(handle.machine or handle.machine_id, self._workdir(handle.machine_id),
                             mode=self.agent_mode).start()
        self._attach_agent(handle, agent)

    @staticmethod
    def _attach_agent(handle: MachineHandle, agent: Optional[AgentProcess]) -> None:
        handle.agent = agent
        if agent is None:
            return
        handle.pid = agent.pid
        handle.endpoint = agent.endpoint
        handle.public_key = _b64(agent.public_key)

    @abstractmethod
    def _bring_up(self, handle: MachineHandle, preinstalled: bool) -> None:
        """Walk `handle` through this backend's startup phases and attach an agent."""

    def _release(self, handle: MachineHandle) -> None:
        if handle.agent is not None:
            handle.agent.kill()
        elif handle.pid:
            kill_pid(handle.pid)
        elif handle.owner_pid and handle.owner_pid != os.getpid():
            log.warning("%s: agent lives inside process %d; only its inventory entry is removed",
                        handle.machine_id, handle.owner_pid)

    # --- provider operations ----------------------------------------------

    def create_instance(
        self,
        region: str,
        instance_type: Union[str, InstanceType],
        image: str = DEFAULT_IMAGE,
        *,
        deployment_id: str = "",
        machine: str = "",
        authorized: Iterable[bytes] = (),
    ) -> MachineHandle:
        """Provision one machine and block until it is ready."""
        self._check_region(region)
        itype = self._instance_type(instance_type)
        if not self.images.exists(image):
            raise UnknownImage(f"unknown image {image!r}")
        preinstalled = self.images.preinstalled(image)
        handle = MachineHandle(
            machine_id=f"{self.id_prefix}-{secrets.token_hex(4)}",
            backend=self.name, region=region, instance_type=itype.type_id, image=image,
            deployment_id=deployment_id, machine=machine, agent_mode=self.agent_mode,
            owner_pid=os.getpid())
        with self._lock:
            self._handles[handle.machine_id] = handle
        self.inventory.put(handle)
        log.info("%s: creating %s in %s (%s, image %s)", self.name, handle.machine_id, region,
                 itype.type_id, image)
        try:
            self._bring_up(handle, preinstalled)
            if handle.agent is not None:
                handle.agent.authorize(authorized, link=self.link_for(region))
            handle.advance(READY)
        except BaseException:
            with self._lock:
                self._handles.pop(handle.machine_id, None)
            self.inventory.remove(handle.machine_id)
            self._release(handle)
            if handle.state != TERMINATED:
                handle.advance(TERMINATED)
            raise
        self.inventory.put(handle)
        log_event("instance_ready", backend=self.name, machine_id=handle.machine_id,
                  region=region, startup_s=round(handle.startup_s, 4),
                  phases=[p.phase for p in handle.boot_timeline])
        return handle

    def destroy_instance(self, handle: MachineHandle) -> bool:
        """Terminate a machine. Destroying a terminated machine is a no-op."""
        if handle.state == TERMINATED:
            return True
        with self._lock:
            own = self._handles.pop(handle.machine_id, None)
        if own is None and not self.inventory.has(handle.machine_id):
            raise UnknownMachine(f"{self.name} has no machine {handle.machine_id!r}")
        target = own or handle
        self._release(target)
        for h in {id(target): target, id(handle): handle}.values():
            if h.state != TERMINATED:
                h.advance(TERMINATED)
        self.inventory.remove(handle.machine_id)
        log_event("instance_destroyed", backend=self.name, machine_id=handle.machine_id)
        return True

    def list_instances(self) -> list[MachineHandle]:
        """Live machines, preferring this process's handle objects over persisted copies."""
        with self._lock:
            own = dict(self._handles)
        out = []
        for h in self.inventory.handles():
            out.append(own.get(h.machine_id, h))
        return [h for h in out if h.state != TERMINATED]

    def get_instance(self, machine_id: str) -> MachineHandle:
        with self._lock:
            handle = self._handles.get(machine_id)
        handle = handle or self.inventory.get(machine_id)
        if handle is None:
            raise UnknownMachine(f"{self.name} has no machine {machine_id!r}")
        return handle

    def build_image(self, region: str, base: str = DEFAULT_IMAGE,
                    manifest: Iterable[str] = (), tags: Iterable[str] = ()) -> ImageRecord:
        """Bake a pre-installed image. The install cost is paid here, once."""
        self._check_region(region)
        if not self.images.exists(base):
            raise UnknownImage(f"unknown base image {base!r}")
        start = self.clock.now()
        self.clock.sleep(self.delays.install)
        newest = max((r.created_at for r in self.images.list()), default=0.0)
        record = ImageRecord(
            image_id=ImageRegistry.new_id(), backend=self.name, region=region,
            capability_tags=frozenset(tags), created_at=max(time.time(), newest + 1e-6),
            preinstalled=True, base=base, manifest=tuple(manifest))
        self.images.add(record)
        log_event("image_built", image_id=record.image_id, backend=self.name, region=region,
                  build_s=round(self.clock.now() - start, 4))
        return record

    def close(self) -> None:
        """Destroy every machine this process created."""
        with self._lock:
            handles = list(self._handles.values())
        for h in handles:
            try:
                self.destroy_instance(h)
            except ProvisionError as e:
                log.debug("close: %s", e)


def _b64(raw: bytes) -> str:
    return base64.b64encode(raw).decode()


BACKENDS: dict[str, type[Backend]] = {}


def register_backend(name: str, cls: type[Backend]) -> None:
    BACKENDS[name] = cls


def make_backend(name: str, catalog: Optional[ProviderCatalog] = None, **options) -> Backend:
    try:
        cls = BACKENDS[name]
    except KeyError:
        raise UnknownBackend(f"unknown backend {name!r} (known: {', '.join(sorted(BACKENDS))})") \
            from None
    return cls(catalog, **options)
