import json

import pytest

from config import CliConfig, default_state_dir, load_config
from errors import UsageError
from main import main

ROBOT_ONLY = """\
name: bench-desk
nodes:
  - name: camera
    behavior: image-source
    params: {rate_hz: 5, width: 4, height: 4, channels: 1}
    publishes: [/camera]
  - {name: viewer, behavior: sink, subscribes: [/camera]}
"""


@pytest.fixture
def fog(state_dir, capsys):
    def run(*argv):
        code = main(["--state-dir", str(state_dir), *argv])
        out, err = capsys.readouterr()
        return code, out, err
    return run


def test_missing_command_is_a_usage_error(capsys):
    assert main([]) == 2


def test_list_on_an_empty_state_dir(fog):
    code, out, _ = fog("list")
    assert code == 0
    assert out.split() == ["DEPLOYMENT", "NAME", "STATUS", "MACHINE", "BACKEND", "REGION",
                           "TYPE", "STATE", "UPTIME"]
    code, out, _ = fog("--output", "json", "list")
    assert json.loads(out) == {"deployments": []}


def test_delete_needs_a_target(fog):
    assert fog("delete")[0] == 2
    code, out, _ = fog("delete", "--all")
    assert (code, out) == (0, "")
    code, _, err = fog("delete", "dep-missing")
    assert code == 1
    assert "dep-missing" in err


def test_bad_launch_document_exits_2(fog, tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("name: x\nnodes:\n  - {name: a, behavior: teleport}\n")
    code, _, err = fog("launch", "--spec", str(path))
    assert code == 2
    assert err.startswith("fog: error: spec:3")
    assert fog("launch", "--spec", str(tmp_path / "missing.yaml"))[0] == 2


def test_dry_run_prints_the_plan(fog, tmp_path, demo_spec_text, state_dir):
    path = tmp_path / "demo.yaml"
    path.write_text(demo_spec_text)
    code, out, _ = fog("launch", "--spec", str(path), "--dry-run")
    assert code == 0
    assert out.splitlines()[0] == "plan for demo:"
    assert any("provision:gpu" in line for line in out.splitlines())
    assert not (state_dir / "deployments").exists() or not list(
        (state_dir / "deployments").glob("*.json"))


def test_launch_list_and_delete(fog, tmp_path, state_dir):
    path = tmp_path / "desk.yaml"
    path.write_text(ROBOT_ONLY)
    code, out, _ = fog("--agent-mode", "thread", "launch", "--spec", str(path), "--detach")
    assert code == 0
    deployment_id = out.strip()
    assert deployment_id.startswith("dep-")

    code, out, _ = fog("--output", "json", "list")
    [doc] = json.loads(out)["deployments"]
    assert (doc["deployment_id"], doc["status"]) == (deployment_id, "running")

    code, out, _ = fog("delete", deployment_id)
    assert (code, out.strip()) == (0, f"{deployment_id}: deleted")
    assert fog("delete", deployment_id)[0] == 0

    journal = [json.loads(line) for line in (state_dir / "events.jsonl").read_text().splitlines()]
    assert {"command", "deployment_started", "deployment_deleted"} <= {e["type"] for e in journal}


def test_unknown_bench_suite_exits_2(fog):
    code, _, err = fog("bench", "latency")
    assert code == 2
    assert "unknown bench suite" in err


def test_bench_writes_a_report(fog, tmp_path):
    target = tmp_path / "reports" / "region.csv"
    code, out, _ = fog("bench", "region", "--runs", "1", "--seed", "3", "--report", str(target))
    assert code == 0
    assert out.startswith("## region")
    assert target.read_text().startswith("scenario,median_ms")


def test_image_lifecycle(fog):
    code, out, _ = fog("--scale", "0.0001", "image", "create", "--region", "us-west-1",
                       "--tag", "gpu")
    assert code == 0
    image_id = out.strip()
    code, out, _ = fog("image", "list")
    assert image_id in out and "gpu" in out
    assert fog("image", "delete", image_id)[0] == 0
    assert fog("image", "delete", image_id)[0] == 1


def test_config_precedence(state_dir):
    (state_dir / "config.yaml").write_text("scale: 0.5\noutput: json\n")
    assert load_config(state_dir, env={}).scale == 0.5
    assert load_config(state_dir, env={"FOGMESH_SCALE": "0.2"}).scale == 0.2
    config = load_config(state_dir, env={"FOGMESH_SCALE": "0.2"}, scale=0.1, output=None)
    assert (config.scale, config.output) == (0.1, "json")
    assert load_config(state_dir, env={"FOGMESH_BACKEND": "warm-pool"}).default_backend == "warm-pool"


def test_config_errors(state_dir, tmp_path):
    with pytest.raises(UsageError):
        load_config(state_dir, env={"FOGMESH_SCALE": "fast"})
    (state_dir / "config.yaml").write_text("colour: blue\n")
    with pytest.raises(UsageError):
        load_config(state_dir, env={})
    with pytest.raises(UsageError):
        CliConfig(tmp_path, scale=0)
    with pytest.raises(UsageError):
        CliConfig(tmp_path, default_backend="ec2")


def test_default_state_dir(tmp_path):
    assert default_state_dir({"FOGMESH_STATE_DIR": str(tmp_path)}) == tmp_path
    assert default_state_dir({}).name == ".fogmesh"
