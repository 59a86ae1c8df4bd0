"""
Provider catalog: regions, instance types, startup phase delays and robot location profiles.
Loaded from a YAML document when one exists, otherwise the built-in catalog is used.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from constants import (BOOT_DELAY_S, IMAGE_SETUP_DELAY_S, INSTALL_DELAY_S, LINK_BANDWIDTH_BPS,
                       LOCAL_RTT_MS, SCHEDULING_DELAY_S)
from errors import ProvisionError, UnknownInstanceType, UnknownRegion

from .link import LinkModel
from .types import InstanceType

__all__ = ["PhaseDelays", "Region", "ProviderCatalog", "builtin_catalog", "load_catalog"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhaseDelays:
    """Full-scale seconds per startup phase."""
    boot: float = BOOT_DELAY_S
    install: float = INSTALL_DELAY_S
    image_setup: float = IMAGE_SETUP_DELAY_S
    scheduling: float = SCHEDULING_DELAY_S

    def scaled(self, scale: float) -> "PhaseDelays":
        if scale <= 0:
            raise ValueError("scale must be > 0")
        return PhaseDelays(self.boot * scale, self.install * scale,
                           self.image_setup * scale, self.scheduling * scale)


@dataclass(frozen=True)
class Region:
    name: str
    backends: tuple[str, ...]
    bandwidth_bps: float = LINK_BANDWIDTH_BPS


@dataclass
class ProviderCatalog:
    """
    Usage:
        catalog = load_catalog(state_dir / "catalog.yaml")
        catalog.regions_for("mock-cloud")       # ['us-east-2', 'us-west-1']
        catalog.link_for("us-west-1", "west")   # LinkModel(10e6, 3.05)
    """

    regions: dict[str, Region]
    instance_types: list[InstanceType]
    delays: PhaseDelays = field(default_factory=PhaseDelays)
    robot_profiles: dict[str, dict[str, float]] = field(default_factory=dict)
    default_profile: str = "west"

    def region(self, name: str) -> Region:
        try:
            return self.regions[name]
        except KeyError:
            raise UnknownRegion(f"unknown region {name!r}") from None

    def regions_for(self, backend: str) -> list[str]:
        return sorted(r.name for r in self.regions.values() if backend in r.backends)

    def instance_type(self, type_id: str) -> InstanceType:
        for it in self.instance_types:
            if it.type_id == type_id:
                return it
        raise UnknownInstanceType(f"unknown instance type {type_id!r}")

    def profile(self, name: Optional[str] = None) -> dict[str, float]:
        name = name or self.default_profile
        try:
            return self.robot_profiles[name]
        except KeyError:
            raise ProvisionError(f"unknown robot profile {name!r} "
                                 f"(known: {', '.join(sorted(self.robot_profiles))})") from None

    def rtt_ms(self, region: str, profile: Optional[str] = None) -> float:
        """Configured robot-to-region round trip."""
        self.region(region)
        rtts = self.profile(profile)
        if region not in rtts:
            raise UnknownRegion(f"region {region!r} is not reachable from profile "
                                f"{profile or self.default_profile!r}")
        return rtts[region]

    def link_for(self, region: str, profile: Optional[str] = None) -> LinkModel:
        """One direction of the robot-region path: half the round trip, region bandwidth."""
        return LinkModel(self.region(region).bandwidth_bps, self.rtt_ms(region, profile) / 2.0)

    def with_profile(self, profile: str) -> "ProviderCatalog":
        self.profile(profile)
        return replace(self, default_profile=profile)

    def to_dict(self) -> dict:
        return {
            "regions": {r.name: {"backends": list(r.backends), "bandwidth_bps": r.bandwidth_bps}
                        for r in self.regions.values()},
            "instance_types": [it.to_dict() for it in self.instance_types],
            "delays": {"boot": self.delays.boot, "install": self.delays.install,
                       "image_setup": self.delays.image_setup,
                       "scheduling": self.delays.scheduling},
            "robot_profiles": {k: dict(v) for k, v in self.robot_profiles.items()},
            "default_profile": self.default_profile,
        }


def builtin_catalog() -> ProviderCatalog:
    cloud = ("mock-cloud", "warm-pool")
    return ProviderCatalog(
        regions={
            "us-west-1": Region("us-west-1", cloud),
            "us-east-2": Region("us-east-2", cloud),
            "local": Region("local", ("local-process",), bandwidth_bps=1e9),
        },
        instance_types=[
            InstanceType("small", 2, 4096, 0, 0.05),
            InstanceType("medium", 4, 16384, 0, 0.20),
            InstanceType("large", 8, 32768, 0, 0.40),
            InstanceType("gpu", 8, 32768, 1, 1.20),
        ],
        delays=PhaseDelays(),
        robot_profiles={
            "west": {"us-west-1": 6.1, "us-east-2": 74.0, "local": LOCAL_RTT_MS},
            "east": {"us-west-1": 74.0, "us-east-2": 13.0, "local": LOCAL_RTT_MS},
            "single": {"us-west-1": 6.1, "local": LOCAL_RTT_MS},
        },
        default_profile="west",
    )


_TOP_KEYS = {"regions", "instance_types", "delays", "robot_profiles", "default_profile"}
_DELAY_KEYS = {"boot", "install", "image_setup", "scheduling"}


def _parse(doc: dict, source: str) -> ProviderCatalog:
    if not isinstance(doc, dict):
        raise ProvisionError(f"{source}: catalog must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ProvisionError(f"{source}: unknown keys {sorted(unknown)}")
    base = builtin_catalog()
    try:
        regions = base.regions
        if "regions" in doc:
            regions = {name: Region(name, tuple(spec.get("backends", ())),
                                    float(spec.get("bandwidth_bps", LINK_BANDWIDTH_BPS)))
                       for name, spec in doc["regions"].items()}
        types = base.instance_types
        if "instance_types" in doc:
            types = [InstanceType(str(t["type_id"]), int(t["cpu_cores"]), int(t["memory"]),
                                  int(t.get("gpu_units", 0)), float(t["price"]))
                     for t in doc["instance_types"]]
        delays = base.delays
        if "delays" in doc:
            bad = set(doc["delays"]) - _DELAY_KEYS
            if bad:
                raise ProvisionError(f"{source}: unknown delay phases {sorted(bad)}")
            delays = replace(delays, **{k: float(v) for k, v in doc["delays"].items()})
        profiles = base.robot_profiles
        if "robot_profiles" in doc:
            profiles = {name: {r: float(ms) for r, ms in rtts.items()}
                        for name, rtts in doc["robot_profiles"].items()}
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise ProvisionError(f"{source}: invalid catalog: {e}") from e
    if not types:
        raise ProvisionError(f"{source}: catalog lists no instance types")
    catalog = ProviderCatalog(regions, types, delays, profiles,
                              str(doc.get("default_profile", next(iter(profiles), "west"))))
    catalog.profile()
    return catalog


def load_catalog(path: Optional[Path] = None) -> ProviderCatalog:
    """Read `path` if it exists; fall back to the built-in catalog."""
    if path is None or not Path(path).exists():
        return builtin_catalog()
    try:
        with open(path) as f:
            doc = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ProvisionError(f"{path}: {e}") from e
    catalog = _parse(doc, str(path))
    log.info("loaded catalog %s: %d regions, %d instance types",
             path, len(catalog.regions), len(catalog.instance_types))
    return catalog
