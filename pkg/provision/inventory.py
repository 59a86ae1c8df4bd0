"""
Per-backend instance tables under <state_dir>/instances/<backend>.json.
This is what a backend believes is running, readable by any process sharing the state dir.
"""
import contextlib
import logging
import os
from pathlib import Path
from typing import Optional

from core.persist import atomic_write_json, file_lock, read_json

from .types import TERMINATED, MachineHandle

__all__ = ["Inventory", "list_instances", "pid_alive"]

log = logging.getLogger(__name__)


def pid_alive(pid: Optional[int]) -> bool:
    if not pid:
        return False
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _live(handle: MachineHandle) -> bool:
    if handle.state == TERMINATED:
        return False
    # process agents are checked by their own pid, thread agents by the process hosting them
    return pid_alive(handle.pid if handle.pid else handle.owner_pid)


class Inventory:
    """
    Usage:
        inv = Inventory(state_dir, "mock-cloud")
        inv.put(handle)
        inv.handles()        # reconciled: dead agents dropped
        inv.remove(handle.machine_id)
    """

    def __init__(self, state_dir: Optional[Path], backend: str):
        self.backend = backend
        self.path = Path(state_dir) / "instances" / f"{backend}.json" if state_dir else None
        self._mem: dict[str, dict] = {}

    def _read(self) -> dict[str, dict]:
        if self.path is None:
            return dict(self._mem)
        return read_json(self.path, default={}) or {}

    def _write(self, table: dict[str, dict]) -> None:
        if self.path is None:
            self._mem = dict(table)
        else:
            atomic_write_json(self.path, table)

    def _lock(self):
        if self.path is None:
            return contextlib.nullcontext()
        return file_lock(self.path.with_suffix(".lock"))

    def put(self, handle: MachineHandle) -> None:
        with self._lock():
            table = self._read()
            table[handle.machine_id] = handle.to_dict()
            self._write(table)

    def remove(self, machine_id: str) -> bool:
        with self._lock():
            table = self._read()
            found = table.pop(machine_id, None) is not None
            if found:
                self._write(table)
            return found

    def has(self, machine_id: str) -> bool:
        return machine_id in self._read()

    def get(self, machine_id: str) -> Optional[MachineHandle]:
        data = self._read().get(machine_id)
        return MachineHandle.from_dict(data) if data else None

    def reconcile(self) -> list[str]:
        """Drop entries whose agent is gone. Returns the removed machine ids."""
        with self._lock():
            table = self._read()
            dead = [mid for mid, d in table.items() if not _live(MachineHandle.from_dict(d))]
            for mid in dead:
                del table[mid]
            if dead:
                self._write(table)
                log.info("%s inventory: dropped %d dead machine(s)", self.backend, len(dead))
            return dead

    def handles(self) -> list[MachineHandle]:
        self.reconcile()
        out = [MachineHandle.from_dict(d) for d in self._read().values()]
        return sorted(out, key=lambda h: (h.created_at, h.machine_id))


def list_instances(state_dir: Path, backend: Optional[str] = None) -> list[MachineHandle]:
    """Every live machine any backend recorded under `state_dir`."""
    root = Path(state_dir) / "instances"
    if not root.is_dir():
        return []
    names = [backend] if backend else sorted(p.stem for p in root.glob("*.json"))
    out: list[MachineHandle] = []
    for name in names:
        out.extend(Inventory(state_dir, name).handles())
    return out
