"""
Cloud machine startup: time from launching a one-machine deployment until the robot receives
the first message from a node on that machine, per backend and image kind.

    mock-cloud / default    boot + full install
    mock-cloud / custom     boot + short setup on a pre-installed image
    warm-pool  / default    scheduling onto an already running machine

The robot-to-region round trip is pinned to loopback scale so the numbers isolate startup.
"""
import logging
import statistics
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from constants import DEFAULT_IMAGE, DEFAULT_SCALE, LOCAL_RTT_MS, ROBOT_MACHINE
from errors import BenchError, UsageError
from launch.spec import LaunchSpec, MachineSpec, NodeSpec
from orchestrator.execute import Orchestrator
from orchestrator.record import RUNNING
from provision.catalog import PhaseDelays, ProviderCatalog, builtin_catalog

from .report import BenchReport

__all__ = ["STARTUP_CELLS", "run_startup_bench", "configured_startup_s"]

log = logging.getLogger(__name__)

STARTUP_CELLS: tuple[tuple[str, str], ...] = (
    ("mock-cloud", "default"),
    ("mock-cloud", "custom"),
    ("warm-pool", "default"),
)
BENCH_REGION = "us-west-1"
BENCH_PROFILE = "startup"
PING_TOPIC = "/startup/ping"
FIRST_MESSAGE_TIMEOUT_S = 10.0


def configured_startup_s(backend: str, image: str, delays: PhaseDelays) -> float:
    """Sum of the configured phases a cell pays (already scaled)."""
    if backend == "warm-pool":
        return delays.scheduling
    if image == "custom":
        return delays.boot + delays.image_setup
    return delays.boot + delays.install


def _bench_catalog(catalog: Optional[ProviderCatalog]) -> ProviderCatalog:
    base = catalog or builtin_catalog()
    near = {region: LOCAL_RTT_MS for region in base.regions}
    return replace(base, robot_profiles={**base.robot_profiles, BENCH_PROFILE: near},
                   default_profile=BENCH_PROFILE)


def _startup_spec(backend: str, image: str) -> LaunchSpec:
    return LaunchSpec(
        f"startup-{backend}",
        machines=(MachineSpec("cloud", backend, BENCH_REGION, "small", image),),
        nodes=(
            NodeSpec("pinger", "image-source", "cloud", publishes=(PING_TOPIC,),
                     params={"rate_hz": 200, "width": 4, "height": 4, "channels": 1}),
            NodeSpec("startup_sink", "sink", ROBOT_MACHINE, subscribes=(PING_TOPIC,)),
        ))


def _one_launch(orch: Orchestrator, spec: LaunchSpec) -> tuple[float, float]:
    """Returns (launch-to-first-message, machine startup) in seconds."""
    start = time.monotonic()
    record = orch.execute(orch.prepare(spec))
    try:
        if record.status != RUNNING:
            raise BenchError(f"startup launch failed at {record.failed_step}: {record.error}")
        sink = orch.deployment(record.deployment_id).behavior("startup_sink")
        deadline = start + FIRST_MESSAGE_TIMEOUT_S
        while sink.first_instant is None:
            if time.monotonic() > deadline:
                raise BenchError("no message from the cloud machine")
            time.sleep(0.001)
        return sink.first_instant - start, record.machine("cloud").startup_s
    finally:
        orch.teardown(record.deployment_id)


def run_startup_bench(cells: Sequence[tuple[str, str]] = STARTUP_CELLS, repetitions: int = 5, *,
                      scale: float = DEFAULT_SCALE, seed: int = 0,
                      state_dir: Optional[Path] = None,
                      catalog: Optional[ProviderCatalog] = None) -> BenchReport:
    if repetitions < 1:
        raise UsageError("repetitions must be >= 1")
    catalog = _bench_catalog(catalog)
    delays = catalog.delays.scaled(scale)
    report = BenchReport("startup", "Backend / image", [
        ("startup_mean_s", "Startup (s)"), ("startup_std_s", "Std (s)"),
        ("configured_s", "Configured (s)"), ("machine_mean_s", "Machine phases (s)"),
        ("repetitions", "Runs")],
        environment={"seed": seed, "scale": scale, "region": BENCH_REGION})

    orch = Orchestrator(state_dir, catalog=catalog, scale=scale, agent_mode="thread", seed=seed,
                        profile=BENCH_PROFILE, warm_pool_size=1)
    try:
        for backend, image in cells:
            orch.backend(backend)     # a warm pool pays its cluster start here, unmeasured
            image_id = DEFAULT_IMAGE
            if image == "custom":
                image_id = orch.backend(backend).build_image(
                    BENCH_REGION, tags=("startup-bench",)).image_id
            elif image != DEFAULT_IMAGE:
                raise UsageError(f"unknown image kind {image!r} (known: default, custom)")
            spec = _startup_spec(backend, image_id)
            samples, machine = [], []
            for i in range(repetitions):
                first, phases = _one_launch(orch, spec)
                log.info("startup %s/%s run %d: %.3fs", backend, image, i + 1, first)
                samples.append(first)
                machine.append(phases)
            report.add(f"{backend} / {image}",
                       startup_mean_s=statistics.fmean(samples),
                       startup_std_s=statistics.stdev(samples) if len(samples) > 1 else 0.0,
                       configured_s=configured_startup_s(backend, image, delays),
                       machine_mean_s=statistics.fmean(machine),
                       repetitions=repetitions)
    finally:
        orch.shutdown()
    return report
