"""
Warm pool: machines are already booted and installed, and a create only pays scheduling.
Each region keeps its own pool; a machine booted in one region never serves another.
Destroyed machines go back to their region's pool with their agent reset.
"""
import logging
import secrets
from dataclasses import dataclass, field
from typing import Optional

from core.pool import ObjectPool
from errors import ProvisionError
from logger import log_event

from .backend import Backend, register_backend
from .spawn import AgentProcess
from .types import INSTALLING, MachineHandle, PhaseSpan

__all__ = ["WarmPoolBackend", "PoolSlot"]

log = logging.getLogger(__name__)


@dataclass(eq=False)
class PoolSlot:
    """One pre-started machine waiting in the pool."""
    slot_id: str
    region: str
    agent: Optional[AgentProcess] = None
    boot_timeline: list[PhaseSpan] = field(default_factory=list)
    uses: int = 0


class WarmPoolBackend(Backend):
    """
    Usage:
        backend = WarmPoolBackend(catalog, scale=0.01)
        backend.warm_pool_configure(2, "small", region="us-west-1")   # pays boot+install once
        handle = backend.create_instance("us-west-1", "small")        # scheduling only

    Without a region, every region of the backend gets `size` machines from the same
    cluster start-up.
    """

    name = "warm-pool"
    id_prefix = "wp"

    def __init__(self, catalog=None, **options):
        super().__init__(catalog, **options)
        self.pool_type: Optional[str] = None
        self.pool_region: Optional[str] = None
        self.pool_grow = True
        self.startup_cost_s = 0.0
        self._slots: dict[str, PoolSlot] = {}
        self._pools: dict[str, ObjectPool[PoolSlot]] = {}

    def _new_slot(self, region: str) -> PoolSlot:
        slot = PoolSlot(f"slot-{secrets.token_hex(3)}", region)
        if self.agent_mode != "none":
            slot.agent = AgentProcess(f"pool-{slot.slot_id}", self._workdir(slot.slot_id),
                                      mode=self.agent_mode).start()
        return slot

    def _grow_slot(self, region: str) -> PoolSlot:
        """Cold start for a pool that ran dry: full boot and install."""
        slot: list[PoolSlot] = []
        grow = MachineHandle("grow", self.name, region)
        self._timed(grow, "boot", self.delays.boot, work=lambda: slot.append(self._new_slot(region)))
        self._timed(grow, "install", self.delays.install)
        slot[0].boot_timeline = list(grow.boot_timeline)
        log.info("warm pool grew by one machine in %s (%.3fs)", region, grow.startup_s)
        return slot[0]

    def _new_pool(self, region: str, grow: bool) -> ObjectPool[PoolSlot]:
        return ObjectPool(lambda: self._grow_slot(region), initial=0, grow=grow)

    def warm_pool_configure(self, size: int, instance_type: Optional[str] = None, *,
                            region: Optional[str] = None, grow: bool = True) -> dict:
        """
        Replace the pools with `size` pre-started machines per region.
        The cluster start-up (boot + install) is paid once for all of them.
        """
        if size < 0:
            raise ValueError("pool size must be >= 0")
        if region is not None:
            self._check_region(region)
        if instance_type is not None:
            self._instance_type(instance_type)
        self._drain()
        self.pool_type = instance_type
        self.pool_region = region
        self.pool_grow = grow
        regions = [region] if region is not None else self.regions()
        pools = {r: self._new_pool(r, grow) for r in regions}
        start = self.clock.now()
        slots: list[PoolSlot] = []
        if size and regions:
            cluster = MachineHandle("cluster", self.name, regions[0])
            self._timed(cluster, "boot", self.delays.boot,
                        work=lambda: slots.extend(self._new_slot(r) for r in regions
                                                  for _ in range(size)))
            self._timed(cluster, "install", self.delays.install)
        for slot in slots:
            pools[slot.region].add(slot)
        self._pools = pools
        self.startup_cost_s = self.clock.now() - start
        state = self.pool_state()
        log_event("warm_pool_configured", **state)
        return state

    def pool_state(self) -> dict:
        pools = list(self._pools.values())
        return {
            "available": sum(p.available for p in pools),
            "active": sum(p.active for p in pools),
            "acquires": sum(p.acquires for p in pools),
            "releases": sum(p.releases for p in pools),
            "grown": sum(p.grown for p in pools),
            "instance_type": self.pool_type,
            "region": self.pool_region,
            "regions": sorted(self._pools),
            "startup_cost_s": round(self.startup_cost_s, 4),
        }

    def pool(self, region: str) -> ObjectPool[PoolSlot]:
        """The pool serving `region`. Unpinned backends start an empty one on first use."""
        pool = self._pools.get(region)
        if pool is None and self.pool_region is None:
            with self._lock:
                pool = self._pools.setdefault(region, self._new_pool(region, self.pool_grow))
        if pool is None:
            served = ", ".join(sorted(self._pools)) or "none"
            raise ProvisionError(f"warm pool has no machines in {region} (serves: {served})")
        return pool

    def _bring_up(self, handle: MachineHandle, preinstalled: bool) -> None:
        if self.pool_type is not None and handle.instance_type != self.pool_type:
            raise ProvisionError(f"warm pool runs {self.pool_type} machines, "
                                 f"not {handle.instance_type}")
        pool = self.pool(handle.region)
        slot = pool.acquire()
        while slot.agent is not None and not slot.agent.alive():
            log.warning("warm pool: dropping dead machine %s", slot.slot_id)
            pool.discard(slot)
            slot = pool.acquire()
        if slot.boot_timeline:
            # grown on demand: this create paid the cold start
            handle.boot_timeline.extend(slot.boot_timeline)
            slot.boot_timeline = []
        slot.uses += 1
        with self._lock:
            self._slots[handle.machine_id] = slot
        handle.advance(INSTALLING)
        self._timed(handle, "schedule", self.delays.scheduling)
        self._attach_agent(handle, slot.agent)

    def _release(self, handle: MachineHandle) -> None:
        with self._lock:
            slot = self._slots.pop(handle.machine_id, None)
        if slot is None:
            super()._release(handle)
            return
        pool = self._pools.get(slot.region)
        if slot.agent is not None and not slot.agent.alive():
            if pool is not None:
                pool.discard(slot)
            return
        if pool is not None and slot.agent is not None:
            slot.agent.reset()
        if pool is None or not pool.release(slot):
            # the pool was reconfigured while this machine was out
            if slot.agent is not None:
                slot.agent.kill()

    def _drain(self) -> None:
        for pool in self._pools.values():
            for slot in pool.drain():
                if slot.agent is not None:
                    slot.agent.kill()

    def close(self) -> None:
        super().close()
        self._drain()


register_backend(WarmPoolBackend.name, WarmPoolBackend)
