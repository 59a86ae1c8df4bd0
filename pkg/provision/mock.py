"""
Mock cloud: simulated geography and boot latency, agents on loopback.
Phases: boot, then install (default image) or setup (pre-installed image).
"""
from .backend import Backend, register_backend
from .types import INSTALLING, MachineHandle

__all__ = ["MockCloudBackend"]


class MockCloudBackend(Backend):
    name = "mock-cloud"
    id_prefix = "mc"

    def _bring_up(self, handle: MachineHandle, preinstalled: bool) -> None:
        self._timed(handle, "boot", self.delays.boot, work=lambda: self._spawn_agent(handle))
        handle.advance(INSTALLING)
        if preinstalled:
            self._timed(handle, "setup", self.delays.image_setup)
        else:
            self._timed(handle, "install", self.delays.install)


register_backend(MockCloudBackend.name, MockCloudBackend)
