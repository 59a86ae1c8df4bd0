"""
Compute offload: is it worth shipping a request to a faster machine?

A synthetic-compute node on the cloud side burns units/speed seconds of simulated time
per request; the robot times the whole round trip over an emulated link. Presets put
planning and localisation workloads into those terms.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from constants import (AEAD_TAG_LEN, ANNOUNCE_INTERVAL_S, DATAGRAM_HEADER_LEN,
                       LINK_BANDWIDTH_BPS, MAX_DATAGRAM_PAYLOAD, ROBOT_MACHINE)
from errors import BenchError, UsageError
from launch.spec import NodeSpec
from orchestrator.behaviors import make_behavior
from provision.link import LinkModel
from pubsub.fragment import max_fragment_payload
from pubsub.mesh import Mesh

from .report import BenchReport

__all__ = ["OffloadScenario", "OFFLOAD_PRESETS", "run_offload_bench", "run_offload_scenario",
           "run_offload_suite", "payload_for_network_time"]

log = logging.getLogger(__name__)

REQUEST_TOPIC = "/offload/request"
RESPONSE_TOPIC = "/offload/response"
TINY_PAYLOAD = 64


def _link_for_rtt(rtt_s: float, bandwidth_bps: float = LINK_BANDWIDTH_BPS) -> LinkModel:
    return LinkModel(bandwidth_bps, rtt_s * 1000.0 / 2)


def payload_for_network_time(network_s: float, link: LinkModel, topic: str = REQUEST_TOPIC) -> int:
    """Request size whose transfer, framing included, takes `network_s` on `link`."""
    wire_per_datagram = MAX_DATAGRAM_PAYLOAD + DATAGRAM_HEADER_LEN + AEAD_TAG_LEN
    efficiency = max_fragment_payload(topic) / wire_per_datagram
    transfer_s = max(0.0, network_s - 2 * link.delay_s)
    return int(transfer_s * link.bandwidth_bps / 8 * efficiency)


@dataclass(frozen=True)
class OffloadScenario:
    name: str
    compute_units: float
    robot_speed: float = 1.0
    cloud_speed: float = 1.0
    request_bytes: int = TINY_PAYLOAD
    response_bytes: int = TINY_PAYLOAD
    link: LinkModel = field(default_factory=LinkModel)
    group: str = "custom"

    def __post_init__(self):
        if self.robot_speed <= 0 or self.cloud_speed <= 0:
            raise ValueError("speeds must be > 0")
        if self.compute_units < 0:
            raise ValueError("compute_units must be >= 0")
        if self.request_bytes < 0 or self.response_bytes < 0:
            raise ValueError("payload sizes must be >= 0")


def _timed(name: str, group: str, robot_s: float, cloud_s: float, rtt_s: float,
           network_s: float = 0.0) -> OffloadScenario:
    """A scenario from measured times: robot-only seconds, cloud compute seconds, RTT."""
    link = _link_for_rtt(rtt_s)
    request = payload_for_network_time(network_s, link) if network_s > rtt_s else TINY_PAYLOAD
    return OffloadScenario(name, compute_units=robot_s, robot_speed=1.0,
                           cloud_speed=robot_s / cloud_s, request_bytes=request,
                           link=link, group=group)


# Motion planning: seconds on the robot vs on a GPU machine, tiny requests.
# Grasp planning: same compute, the depth image dominates the transfer.
# Localisation: per-frame latency with compressed vs streamed camera input.
OFFLOAD_PRESETS: dict[str, OffloadScenario] = {s.name: s for s in (
    _timed("apartment", "motion-planning", 157.6, 3.46, 0.04),
    _timed("cubicles", "motion-planning", 35.8, 1.51, 0.05),
    _timed("home", "motion-planning", 161.8, 4.73, 0.05),
    _timed("twistycool", "motion-planning", 167.9, 4.76, 0.05),
    _timed("grasp-uncompressed", "grasp-planning", 14.0, 0.6, 0.05, network_s=5.0),
    _timed("grasp-compressed", "grasp-planning", 14.0, 0.6, 0.05, network_s=0.7),
    _timed("grasp-streaming", "grasp-planning", 14.0, 0.6, 0.05, network_s=0.6),
    _timed("fr1-xyz-compressed", "localisation", 0.52, 0.08, 0.0122, network_s=0.74),
    _timed("fr1-xyz-streaming", "localisation", 0.52, 0.08, 0.0122, network_s=0.16),
    _timed("fr2-xyz-compressed", "localisation", 0.43, 0.08, 0.0122, network_s=0.67),
    _timed("fr2-xyz-streaming", "localisation", 0.43, 0.08, 0.0122, network_s=0.17),
    _timed("fr2-loop-compressed", "localisation", 0.68, 0.08, 0.0122, network_s=0.81),
    _timed("fr2-loop-streaming", "localisation", 0.68, 0.08, 0.0122, network_s=0.14),
)}


def run_offload_bench(compute_units: float, robot_speed: float = 1.0, cloud_speed: float = 1.0,
                      request_bytes: int = TINY_PAYLOAD, response_bytes: int = TINY_PAYLOAD,
                      link: Optional[LinkModel] = None, *, seed: int = 0) -> dict:
    """
    One request/response through a simulated robot+cloud deployment.

    Returns:
        robot_only_s, cloud_compute_s, network_s, total_s, speedup, bytes_on_wire
    """
    if robot_speed <= 0 or cloud_speed <= 0:
        raise ValueError("speeds must be > 0")
    link = link or LinkModel()
    robot_only = compute_units / robot_speed
    cloud_compute = compute_units / cloud_speed
    wire_s = (request_bytes + response_bytes) * 8 / link.bandwidth_bps
    # peers must not go stale while the cloud side is busy or the request is in flight
    interval = max(ANNOUNCE_INTERVAL_S, cloud_compute + wire_s)

    mesh = Mesh([ROBOT_MACHINE, "cloud"], links={"cloud": link}, seed=seed,
                announce_interval=interval)
    try:
        make_behavior(mesh["cloud"], NodeSpec(
            "offload_compute", "synthetic-compute", "cloud",
            publishes=(RESPONSE_TOPIC,), subscribes=(REQUEST_TOPIC,),
            params={"units": compute_units, "speed": cloud_speed,
                    "response_bytes": response_bytes})).start()
        sink = make_behavior(mesh[ROBOT_MACHINE], NodeSpec(
            "offload_sink", "sink", subscribes=(RESPONSE_TOPIC,))).start()
        robot = mesh[ROBOT_MACHINE]
        robot.add_node("offload_client")
        robot.advertise("offload_client", REQUEST_TOPIC)
        mesh.settle()

        uplink = mesh.network.link(mesh.endpoints[ROBOT_MACHINE].address,
                                   mesh.endpoints["cloud"].address)
        sent_before = uplink.bytes_sent
        start = mesh.clock.now()
        robot.publish("offload_client", REQUEST_TOPIC, bytes(request_bytes))
        deadline = start + cloud_compute + 4 * (wire_s + 2 * link.delay_s) + 5 * interval
        while sink.first_instant is None:
            due = mesh.network.next_due()
            if due is None or due > deadline:
                raise BenchError("offload response never arrived")
            mesh.network.step()
        total = sink.first_instant - start
    finally:
        mesh.close()

    return {
        "robot_only_s": robot_only,
        "cloud_compute_s": cloud_compute,
        "network_s": total - cloud_compute,
        "total_s": total,
        "speedup": robot_only / total,
        "bytes_on_wire": uplink.bytes_sent - sent_before,
    }


def run_offload_scenario(scenario: OffloadScenario, *, seed: int = 0) -> dict:
    return run_offload_bench(scenario.compute_units, scenario.robot_speed, scenario.cloud_speed,
                             scenario.request_bytes, scenario.response_bytes, scenario.link,
                             seed=seed)


def run_offload_suite(names: Optional[Sequence[str]] = None, *, seed: int = 0,
                      group: Optional[str] = None) -> BenchReport:
    """Run presets by name (default: all, or all of one group)."""
    if names:
        unknown = [n for n in names if n not in OFFLOAD_PRESETS]
        if unknown:
            raise UsageError(f"unknown offload presets {unknown} "
                             f"(known: {', '.join(OFFLOAD_PRESETS)})")
        scenarios = [OFFLOAD_PRESETS[n] for n in names]
    else:
        scenarios = [s for s in OFFLOAD_PRESETS.values() if group in (None, s.group)]
    report = BenchReport("offload", "Scenario", [
        ("robot_only_s", "Robot (s)"), ("cloud_compute_s", "Cloud compute (s)"),
        ("network_s", "Network (s)"), ("total_s", "Total (s)"), ("speedup", "Speedup")],
        environment={"seed": seed})
    for scenario in scenarios:
        result = run_offload_scenario(scenario, seed=seed)
        log.info("offload %s: total %.3fs, %.1fx", scenario.name, result["total_s"],
                 result["speedup"])
        report.add(scenario.name, group=scenario.group, **result)
    return report
