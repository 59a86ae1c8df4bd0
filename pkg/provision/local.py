"""
Local processes as machines: spawned immediately, install paid only for the default image.
"""
from .backend import Backend, register_backend
from .types import INSTALLING, MachineHandle

__all__ = ["LocalProcessBackend"]


class LocalProcessBackend(Backend):
    name = "local-process"
    id_prefix = "lp"

    def __init__(self, catalog=None, **options):
        options.setdefault("agent_mode", "process")
        super().__init__(catalog, **options)

    def _bring_up(self, handle: MachineHandle, preinstalled: bool) -> None:
        self._timed(handle, "spawn", 0.0, work=lambda: self._spawn_agent(handle))
        if not preinstalled:
            handle.advance(INSTALLING)
            self._timed(handle, "install", self.delays.install)


register_backend(LocalProcessBackend.name, LocalProcessBackend)
