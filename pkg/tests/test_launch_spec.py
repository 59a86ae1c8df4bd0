import pytest

from constants import AUTO
from errors import DanglingReference, DuplicateName, SpecError, UnknownBackend
from launch.spec import (LaunchSpec, MachineSpec, NodeSpec, ResourceSpec, parse_launch_spec,
                         spec_from_dict)

FULL = """\
name: grasp-demo
machines:
  - name: gpu
    backend: mock-cloud
    instance_type: {cpu_cores: 4, memory: 8192, gpu_units: 1}
nodes:
  - name: camera
    behavior: image-source
    params: {rate_hz: 30}
    publishes: [/camera]
  - name: grasp
    behavior: echo-ack
    machine: gpu
    subscribes: [/camera]
    publishes: [/grasp]
    remaps: {/grasp: /grasp/out}
compression:
  - {topic: /camera, mode: streaming}
monitor:
  topics: [/camera, /diag/*]
  port: 9000
"""


def test_parse_full_document():
    spec = parse_launch_spec(FULL)
    assert spec.name == "grasp-demo"
    (gpu,) = spec.machines
    assert gpu.region == AUTO and gpu.image == AUTO
    assert gpu.instance_type == ResourceSpec(4, 8192, 1)
    assert gpu.requirements.gpu_units == 1
    assert gpu.unresolved == ["region", "instance_type", "image"]
    assert [n.name for n in spec.robot_nodes] == ["camera"]
    assert spec.nodes[1].effective_publishes == ("/grasp/out",)
    assert spec.compression_directives == (("/camera", "streaming"),)
    assert spec.monitor.topics == ("/camera", "/diag/*")
    assert spec.monitor.port == 9000


def test_default_machine_is_robot(demo_spec_text):
    spec = parse_launch_spec(demo_spec_text)
    assert spec.machine("gpu").instance_type == "small"
    assert spec.nodes[0].machine == "robot"
    assert spec.subscribers("/camera")[0].name == "echo"


def test_unknown_key_reports_its_line():
    text = "name: demo\nmachines:\n  - name: gpu\n    backend: mock-cloud\n    colour: red\n"
    with pytest.raises(SpecError) as err:
        parse_launch_spec(text)
    assert err.value.line == 5
    assert "colour" in str(err.value)
    assert str(err.value).startswith("spec:5:")


def test_dangling_machine_reference():
    text = ("name: demo\n"
            "nodes:\n"
            "  - name: slam\n"
            "    behavior: sink\n"
            "    machine: nowhere\n")
    with pytest.raises(DanglingReference) as err:
        parse_launch_spec(text)
    assert err.value.line == 5
    assert err.value.exit_code == 2


def test_duplicate_node_names():
    text = ("name: demo\n"
            "nodes:\n"
            "  - {name: a, behavior: sink}\n"
            "  - {name: a, behavior: sink}\n")
    with pytest.raises(DuplicateName):
        parse_launch_spec(text)


def test_robot_name_is_reserved():
    text = "name: demo\nmachines:\n  - {name: robot, backend: mock-cloud}\n"
    with pytest.raises(DuplicateName):
        parse_launch_spec(text)


def test_unknown_backend():
    text = "name: demo\nmachines:\n  - {name: gpu, backend: ec2}\n"
    with pytest.raises(UnknownBackend) as err:
        parse_launch_spec(text)
    assert err.value.line == 3


def test_topic_must_be_absolute():
    text = "name: demo\nnodes:\n  - {name: a, behavior: sink, subscribes: [camera]}\n"
    with pytest.raises(SpecError, match="must be a string starting with"):
        parse_launch_spec(text)


def test_topic_length_limit():
    text = f"name: demo\nnodes:\n  - {{name: a, behavior: sink, subscribes: [/{'x' * 256}]}}\n"
    with pytest.raises(SpecError, match="limit is 256"):
        parse_launch_spec(text)


def test_remap_of_undeclared_topic():
    text = ("name: demo\n"
            "nodes:\n"
            "  - name: a\n"
            "    behavior: sink\n"
            "    subscribes: [/x]\n"
            "    remaps: {/y: /z}\n")
    with pytest.raises(SpecError) as err:
        parse_launch_spec(text)
    assert err.value.field == "remaps"


def test_unknown_compression_mode():
    text = "name: demo\ncompression:\n  - {topic: /camera, mode: jpeg}\n"
    with pytest.raises(SpecError, match="unknown compression mode"):
        parse_launch_spec(text)


def test_duplicate_yaml_key():
    with pytest.raises(DuplicateName) as err:
        parse_launch_spec("name: a\nname: b\n")
    assert err.value.line == 2


@pytest.mark.parametrize("text", ["", "name: [unclosed\n"])
def test_empty_or_broken_document(text):
    with pytest.raises(SpecError):
        parse_launch_spec(text)


def test_monitor_rate_cap_must_be_positive():
    text = "name: demo\nmonitor:\n  topics: [/a]\n  rate_cap_hz: 0\n"
    with pytest.raises(SpecError, match="rate cap"):
        parse_launch_spec(text)


def test_to_dict_reparses_to_the_same_spec():
    spec = parse_launch_spec(FULL)
    assert spec_from_dict(spec.to_dict()) == spec


def test_validate_catches_programmatic_mistakes():
    spec = LaunchSpec("x", machines=(MachineSpec("gpu", "mock-cloud"),),
                      nodes=(NodeSpec("a", "sink", "cpu"),))
    with pytest.raises(DanglingReference):
        spec.validate()
