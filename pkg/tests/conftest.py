import pytest

from constants import ROBOT_MACHINE
from logger import set_journal
from provision.catalog import builtin_catalog
from provision.images import ImageRegistry
from provision.link import LinkModel
from pubsub.mesh import Mesh

DEMO_SPEC = """\
name: demo
machines:
  - name: gpu
    backend: mock-cloud
    region: us-west-1
    instance_type: small
    image: default
nodes:
  - name: camera
    behavior: image-source
    params: {rate_hz: 30, width: 8, height: 8, channels: 1}
    publishes: [/camera]
    subscribes: [/camera/ack]
  - name: echo
    behavior: echo-ack
    machine: gpu
    subscribes: [/camera]
    publishes: [/camera/ack]
"""


@pytest.fixture(autouse=True)
def _no_journal():
    yield
    set_journal(None)


@pytest.fixture
def state_dir(tmp_path):
    path = tmp_path / "state"
    path.mkdir()
    return path


@pytest.fixture
def catalog():
    return builtin_catalog()


@pytest.fixture
def images():
    return ImageRegistry()


@pytest.fixture
def mesh():
    m = Mesh([ROBOT_MACHINE, "cloud"], links={"cloud": LinkModel(10e6, 6.1)}, seed=3)
    yield m
    m.close()


@pytest.fixture
def demo_spec_text():
    return DEMO_SPEC
