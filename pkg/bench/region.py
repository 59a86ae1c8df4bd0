"""
Region selection by robot location: probe every region from a robot profile, take medians,
and report which region the resolver picks.
"""
import logging
import statistics
from collections import Counter
from typing import Optional, Sequence

from constants import PROBE_SAMPLES
from launch.resolve import resolve_region
from provision.backend import make_backend
from provision.catalog import ProviderCatalog, builtin_catalog

from .report import BenchReport

__all__ = ["REGION_PROFILES", "run_region_bench", "run_region_suite"]

log = logging.getLogger(__name__)

REGION_PROFILES = ("west", "east", "single")


def run_region_bench(profile: str, *, runs: int = 1, samples: int = PROBE_SAMPLES, seed: int = 0,
                     backend: str = "mock-cloud",
                     catalog: Optional[ProviderCatalog] = None) -> dict:
    """
    Returns:
        chosen, agreement (share of seeded runs that chose it), per-region medians and
        configured round trips in ms
    """
    catalog = catalog or builtin_catalog()
    choices: Counter = Counter()
    medians: dict[str, list[float]] = {}
    for run in range(runs):
        provider = make_backend(backend, catalog, scale=1.0, seed=seed + run, agent_mode="none",
                                profile=profile)
        try:
            probes = provider.probe_all(samples)
        finally:
            provider.close()
        choices[resolve_region(probes)] += 1
        for region, rtts in probes.items():
            medians.setdefault(region, []).append(statistics.median(rtts))
    chosen, count = min(choices.items(), key=lambda kv: (-kv[1], kv[0]))
    result = {
        "profile": profile,
        "chosen": chosen,
        "agreement": count / runs,
        "median_ms": {r: statistics.median(m) for r, m in sorted(medians.items())},
        "configured_ms": {r: catalog.rtt_ms(r, profile) for r in sorted(medians)},
    }
    log.info("region %s: chose %s (%d/%d runs)", profile, chosen, count, runs)
    return result


def run_region_suite(profiles: Sequence[str] = REGION_PROFILES, *, runs: int = 1,
                     seed: int = 0, catalog: Optional[ProviderCatalog] = None) -> BenchReport:
    report = BenchReport("region", "Profile / region", [
        ("median_ms", "Median RTT (ms)"), ("configured_ms", "Configured (ms)"),
        ("chosen", "Chosen"), ("agreement", "Agreement")],
        environment={"seed": seed, "runs": runs})
    for profile in profiles:
        result = run_region_bench(profile, runs=runs, seed=seed, catalog=catalog)
        for region, median in result["median_ms"].items():
            chosen = region == result["chosen"]
            report.add(f"{profile} / {region}", median_ms=median,
                       configured_ms=result["configured_ms"][region],
                       chosen="yes" if chosen else "no",
                       agreement=result["agreement"] if chosen else None)
    return report
