"""Desk-scale benchmark suites and their reports."""
from typing import Callable, Optional

from constants import DEFAULT_SCALE, VIDEO_FRAMES
from errors import UnknownSuite

from .offload import OFFLOAD_PRESETS, OffloadScenario, run_offload_bench, run_offload_suite
from .region import REGION_PROFILES, run_region_bench, run_region_suite
from .report import REPORT_FORMATS, BenchReport, emit_report, parse_report, write_report
from .startup import STARTUP_CELLS, run_startup_bench
from .video import VIDEO_MODES, VideoBenchConfig, run_video_bench, run_video_suite

__all__ = [
    "SUITES", "run_suite",
    "OFFLOAD_PRESETS", "OffloadScenario", "run_offload_bench", "run_offload_suite",
    "REGION_PROFILES", "run_region_bench", "run_region_suite",
    "REPORT_FORMATS", "BenchReport", "emit_report", "parse_report", "write_report",
    "STARTUP_CELLS", "run_startup_bench",
    "VIDEO_MODES", "VideoBenchConfig", "run_video_bench", "run_video_suite",
]


def _video(seed: int, scale: float, frames: Optional[int] = None, **_) -> BenchReport:
    return run_video_suite(seed=seed, frames=frames or VIDEO_FRAMES)


def _offload(seed: int, scale: float, **_) -> BenchReport:
    return run_offload_suite(seed=seed)


def _startup(seed: int, scale: float, repetitions: int = 5, state_dir=None, **_) -> BenchReport:
    return run_startup_bench(repetitions=repetitions, scale=scale, seed=seed, state_dir=state_dir)


def _region(seed: int, scale: float, runs: int = 1, **_) -> BenchReport:
    return run_region_suite(seed=seed, runs=runs)


SUITES: dict[str, Callable[..., BenchReport]] = {
    "video": _video,
    "offload": _offload,
    "startup": _startup,
    "region": _region,
}


def run_suite(name: str, *, seed: int = 0, scale: float = DEFAULT_SCALE, **options) -> BenchReport:
    """
    Raises:
        UnknownSuite: `name` is not one of SUITES
    """
    try:
        suite = SUITES[name]
    except KeyError:
        raise UnknownSuite(f"unknown bench suite {name!r} (known: {', '.join(SUITES)})") from None
    report = suite(seed, scale, **options)
    report.environment.setdefault("seed", seed)
    return report
