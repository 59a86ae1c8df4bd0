"""
Launch-time resolution of AUTO fields: nearest region, cheapest instance type, newest image.
"""
import logging
import statistics
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

from constants import AUTO, DEFAULT_IMAGE
from errors import MissingImage, PlanningError, ResolutionError, UnsatisfiableRequirements
from provision.images import ImageRegistry
from provision.types import InstanceType

from .spec import LaunchSpec, MachineSpec, ResourceSpec

__all__ = ["resolve_region", "select_instance_type", "resolve_image", "Resolution",
           "resolve_machine", "resolve_spec"]

log = logging.getLogger(__name__)

_DIMENSIONS = ("cpu_cores", "memory", "gpu_units")

Prober = Callable[[str], Mapping[str, Sequence[float]]]


def resolve_region(probes: Mapping[str, Sequence[float]]) -> str:
    """Region with the smallest median RTT; ties go to the lexicographically smallest id."""
    if not probes:
        raise ResolutionError("no regions to choose from: probe map is empty")
    for region, samples in probes.items():
        if not samples:
            raise ResolutionError(f"region {region} has no probe samples")
    return min(probes, key=lambda r: (statistics.median(probes[r]), r))


def _satisfies(it: InstanceType, req: ResourceSpec, dim: str) -> bool:
    return getattr(it, dim) >= getattr(req, dim)


def select_instance_type(req: ResourceSpec, catalog: Sequence[InstanceType]) -> InstanceType:
    """Cheapest entry covering every dimension; ties by fewest cores, then type id."""
    if not catalog:
        raise ResolutionError("instance catalog is empty")
    fits = [it for it in catalog if all(_satisfies(it, req, d) for d in _DIMENSIONS)]
    if not fits:
        counts = {d: sum(_satisfies(it, req, d) for it in catalog) for d in _DIMENSIONS}
        tightest = min(_DIMENSIONS, key=lambda d: (counts[d], _DIMENSIONS.index(d)))
        best = max(getattr(it, tightest) for it in catalog)
        raise UnsatisfiableRequirements(
            tightest, f"need {getattr(req, tightest)}, largest in catalog is {best}")
    return min(fits, key=lambda it: (it.price, it.cpu_cores, it.type_id))


def resolve_image(machine: MachineSpec, registry: ImageRegistry, *, gpu_units: int = 0) -> str:
    """
    AUTO picks the newest image for the machine's backend and region (tagged gpu when the
    machine needs GPUs); with no match the default image is used.
    """
    if machine.image != AUTO:
        if not registry.exists(machine.image):
            raise MissingImage(f"machine {machine.name}: image {machine.image!r} is not registered")
        return machine.image
    if machine.region == AUTO:
        raise PlanningError(f"machine {machine.name}: region must be resolved before the image")
    record = registry.newest(machine.backend, machine.region, "gpu" if gpu_units > 0 else None)
    return record.image_id if record is not None else DEFAULT_IMAGE


@dataclass
class Resolution:
    machine: str
    region: str
    instance_type: InstanceType
    image: str
    probes: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "machine": self.machine,
            "region": self.region,
            "instance_type": self.instance_type.to_dict(),
            "image": self.image,
            "probe_medians_ms": {r: round(statistics.median(s), 3) for r, s in self.probes.items()},
        }


def resolve_machine(machine: MachineSpec, catalog: Sequence[InstanceType],
                    registry: ImageRegistry, prober: Optional[Prober] = None) -> Resolution:
    probes: dict[str, list[float]] = {}
    region = machine.region
    if region == AUTO:
        if prober is None:
            raise PlanningError(f"machine {machine.name}: region is AUTO but nothing can probe")
        probes = {r: list(s) for r, s in prober(machine.backend).items()}
        region = resolve_region(probes)
        log.info("%s: nearest region %s (median %.1f ms)", machine.name, region,
                 statistics.median(probes[region]))
    req = machine.requirements
    if req is None:
        matches = [it for it in catalog if it.type_id == machine.instance_type]
        if not matches:
            raise ResolutionError(f"machine {machine.name}: unknown instance type "
                                  f"{machine.instance_type!r}")
        itype = matches[0]
    else:
        itype = select_instance_type(req, catalog)
    gpus = max(itype.gpu_units if req is None else req.gpu_units, 0)
    image = resolve_image(replace(machine, region=region), registry, gpu_units=gpus)
    return Resolution(machine.name, region, itype, image, probes)


def resolve_spec(spec: LaunchSpec, catalog: Sequence[InstanceType], registry: ImageRegistry,
                 prober: Optional[Prober] = None) -> tuple[LaunchSpec, dict[str, Resolution]]:
    """Bind every AUTO field. Returns the resolved spec and the per-machine resolutions."""
    resolutions = {m.name: resolve_machine(m, catalog, registry, prober) for m in spec.machines}
    machines = tuple(
        replace(m, region=resolutions[m.name].region,
                instance_type=resolutions[m.name].instance_type.type_id,
                image=resolutions[m.name].image)
        for m in spec.machines)
    return replace(spec, machines=machines), resolutions
