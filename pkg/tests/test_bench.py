import json

import pytest

from bench import (OFFLOAD_PRESETS, SUITES, BenchReport, VideoBenchConfig, emit_report,
                   parse_report, run_offload_bench, run_offload_suite, run_region_bench,
                   run_startup_bench, run_suite, run_video_bench, run_video_suite, write_report)
from bench.offload import run_offload_scenario
from bench.video import video_launch_spec
from errors import UnknownSuite, UsageError
from provision.link import LinkModel


@pytest.fixture
def report():
    r = BenchReport("video", "Mode", [("fps_received", "FPS")], environment={"seed": 1})
    r.add("raw", fps_received=1.3612345678, bytes_on_wire=10)
    r.add("streaming", fps_received=29.9)
    return r


def test_markdown_report(report):
    text = emit_report(report, "markdown")
    lines = text.splitlines()
    assert lines[0] == "## video"
    assert lines[2] == "| Mode | FPS | bytes_on_wire |"
    assert lines[4] == "| raw | 1.36 | 10 |"
    assert lines[5] == "| streaming | 29.90 | - |"
    assert lines[-1] == "seed=1"


def test_csv_report_reads_back(report):
    text = emit_report(report, "csv")
    assert text.splitlines()[0] == "scenario,fps_received,bytes_on_wire"
    back = parse_report(text, "csv", "video")
    assert back.row("raw") == {"fps_received": 1.361235, "bytes_on_wire": 10}
    assert back.row("streaming") == {"fps_received": 29.9}


def test_json_report(report):
    doc = json.loads(emit_report(report, "json"))
    assert doc["rows"][0]["metrics"]["fps_received"] == 1.361235
    assert parse_report(emit_report(report, "json"), "json").rows == report.rows
    with pytest.raises(UsageError):
        emit_report(report, "xml")
    with pytest.raises(UsageError):
        parse_report("", "markdown")


def test_write_report_follows_the_suffix(report, tmp_path):
    assert write_report(report, tmp_path / "out" / "video.csv") == "csv"
    assert write_report(report, tmp_path / "video.json") == "json"
    assert write_report(report, tmp_path / "video.txt") == "markdown"
    assert (tmp_path / "out" / "video.csv").read_text().startswith("scenario,")


def test_unknown_suite():
    assert set(SUITES) == {"video", "offload", "startup", "region"}
    with pytest.raises(UnknownSuite):
        run_suite("latency")


def test_offload_round_trip_on_a_simulated_link():
    result = run_offload_bench(1.0, robot_speed=1.0, cloud_speed=10.0,
                               link=LinkModel(10e6, 5.0))
    assert result["cloud_compute_s"] == pytest.approx(0.1)
    assert result["total_s"] == pytest.approx(0.11, rel=0.02)
    assert result["speedup"] == pytest.approx(1.0 / result["total_s"])
    assert result["bytes_on_wire"] > 64
    with pytest.raises(ValueError):
        run_offload_bench(1.0, cloud_speed=0)


def test_offload_apartment_preset():
    result = run_offload_scenario(OFFLOAD_PRESETS["apartment"])
    assert result["total_s"] == pytest.approx(3.50, rel=0.02)
    assert result["speedup"] == pytest.approx(45.0, abs=2.0)


def test_offload_large_request_pays_its_transfer():
    result = run_offload_scenario(OFFLOAD_PRESETS["grasp-compressed"])
    assert result["network_s"] == pytest.approx(0.7, rel=0.05)


def test_offload_report_is_deterministic():
    first = emit_report(run_offload_suite(["cubicles"], seed=3), "json")
    second = emit_report(run_offload_suite(["cubicles"], seed=3), "json")
    assert first == second
    with pytest.raises(UsageError):
        run_offload_suite(["garage"])


@pytest.mark.parametrize("profile,region", [("west", "us-west-1"), ("east", "us-east-2"),
                                            ("single", "us-west-1")])
def test_region_choice_follows_the_robot(profile, region):
    result = run_region_bench(profile, runs=3, seed=5)
    assert result["chosen"] == region
    assert result["agreement"] == 1.0
    for name, median in result["median_ms"].items():
        assert median == pytest.approx(result["configured_ms"][name], abs=1.0)


def test_region_report_is_deterministic():
    first = emit_report(run_suite("region", seed=2), "json")
    assert first == emit_report(run_suite("region", seed=2), "json")


def test_video_launch_spec_per_mode():
    raw = video_launch_spec(VideoBenchConfig(mode="raw"))
    assert [n.name for n in raw.nodes] == ["camera", "echo"]
    streaming = video_launch_spec(VideoBenchConfig(mode="streaming"))
    assert {n.behavior for n in streaming.nodes} >= {"stream-encoder", "stream-decoder"}
    with pytest.raises(ValueError):
        VideoBenchConfig(mode="h264")
    with pytest.raises(ValueError):
        VideoBenchConfig(frames=0)


@pytest.mark.parametrize("mode", ["raw", "per-frame", "streaming"])
def test_small_video_keeps_up(mode):
    config = VideoBenchConfig(frames=60, width=64, height=48, mode=mode, warmup=10, seed=1)
    taps = []
    result = run_video_bench(config, tap=lambda src, dst, data: taps.append(len(data)))
    assert result["fps_received"] == pytest.approx(30.0, abs=3.0)
    assert result["frames_captured"] == 60
    assert 0 < result["latency_mean_ms"] < 100
    assert sum(taps) == pytest.approx(result["bytes_on_wire"], rel=0.01)


def test_video_report_is_deterministic():
    link = LinkModel(10e6, 6.1)
    first = emit_report(run_video_suite(["streaming"], seed=4, frames=40, link=link), "json")
    second = emit_report(run_video_suite(["streaming"], seed=4, frames=40, link=link), "json")
    assert first == second


@pytest.mark.slow
def test_video_acceptance():
    report = run_video_suite(seed=0)
    raw, per_frame, streaming = (report.row(m) for m in ("raw", "per-frame", "streaming"))
    assert raw["fps_received"] == pytest.approx(1.36, abs=0.15)
    assert streaming["fps_received"] >= 27
    assert (streaming["latency_mean_ms"] < per_frame["latency_mean_ms"]
            < raw["latency_mean_ms"])
    assert all(report.row(m)["frames_captured"] == 3000 for m in ("raw", "per-frame", "streaming"))


@pytest.mark.slow
def test_offload_acceptance():
    report = run_offload_suite(group="motion-planning")
    apartment = report.row("apartment")
    assert apartment["total_s"] == pytest.approx(3.50, rel=0.02)
    assert apartment["speedup"] == pytest.approx(45.0, abs=2.0)
    assert all(metrics["speedup"] > 20 for _, metrics in report.rows)


@pytest.mark.slow
def test_startup_acceptance(tmp_path):
    report = run_startup_bench(repetitions=5, scale=0.01, seed=0, state_dir=tmp_path)
    default = report.row("mock-cloud / default")
    custom = report.row("mock-cloud / custom")
    warm = report.row("warm-pool / default")
    assert default["startup_mean_s"] == pytest.approx(2.75, rel=0.10)
    assert custom["startup_mean_s"] == pytest.approx(0.85, rel=0.10)
    assert warm["machine_mean_s"] == pytest.approx(0.29, rel=0.10)
    assert 0.29 <= warm["startup_mean_s"] < 0.45
    assert warm["startup_mean_s"] < custom["startup_mean_s"] < default["startup_mean_s"]
    assert custom["startup_mean_s"] / default["startup_mean_s"] == pytest.approx(85 / 275, abs=0.05)
