"""
Deployment state on disk:

    <state_dir>/deployments/<id>.json     one record per deployment
    <state_dir>/keys/<id>/<name>.key      secret keys, mode 0600

Without a state dir everything stays in memory.
"""
import logging
import secrets
import shutil
import threading
import time
from pathlib import Path
from typing import Optional

from core.persist import atomic_write_json, file_lock, read_json
from errors import UnknownDeployment
from overlay.keys import KeyPair
from provision.inventory import list_instances
from provision.types import TERMINATED

from .record import DEGRADED, DELETED, RUNNING, DeploymentRecord

__all__ = ["StateStore"]

log = logging.getLogger(__name__)


class StateStore:
    def __init__(self, state_dir: Optional[Path] = None):
        self.state_dir = Path(state_dir) if state_dir else None
        self._records: dict[str, dict] = {}
        self._keys: dict[tuple[str, str], KeyPair] = {}
        self._lock = threading.Lock()

    @staticmethod
    def new_id() -> str:
        return f"dep-{secrets.token_hex(4)}"

    def _path(self, deployment_id: str) -> Path:
        return self.state_dir / "deployments" / f"{deployment_id}.json"

    def save(self, record: DeploymentRecord) -> None:
        record.updated_at = time.time()
        data = record.to_dict()
        if self.state_dir is None:
            with self._lock:
                self._records[record.deployment_id] = data
            return
        with file_lock(self.state_dir / "deployments" / ".lock"):
            atomic_write_json(self._path(record.deployment_id), data)

    def load(self, deployment_id: str) -> DeploymentRecord:
        if self.state_dir is None:
            with self._lock:
                data = self._records.get(deployment_id)
        else:
            data = read_json(self._path(deployment_id))
        if data is None:
            raise UnknownDeployment(f"no deployment {deployment_id!r}")
        return DeploymentRecord.from_dict(data)

    def exists(self, deployment_id: str) -> bool:
        try:
            self.load(deployment_id)
        except UnknownDeployment:
            return False
        return True

    def list(self) -> list[DeploymentRecord]:
        if self.state_dir is None:
            with self._lock:
                docs = list(self._records.values())
        else:
            docs = [read_json(p) for p in sorted((self.state_dir / "deployments").glob("*.json"))]
        records = [DeploymentRecord.from_dict(d) for d in docs if d]
        return sorted(records, key=lambda r: (r.created_at, r.deployment_id))

    # --- keys ---------------------------------------------------------------

    def save_key(self, deployment_id: str, name: str, keypair: KeyPair) -> None:
        if self.state_dir is None:
            self._keys[(deployment_id, name)] = keypair
            return
        keypair.save(self.state_dir / "keys" / deployment_id / f"{name}.key")

    def load_key(self, deployment_id: str, name: str) -> Optional[KeyPair]:
        if self.state_dir is None:
            return self._keys.get((deployment_id, name))
        path = self.state_dir / "keys" / deployment_id / f"{name}.key"
        return KeyPair.load(path) if path.exists() else None

    def delete_keys(self, deployment_id: str) -> None:
        if self.state_dir is None:
            for key in [k for k in self._keys if k[0] == deployment_id]:
                del self._keys[key]
            return
        shutil.rmtree(self.state_dir / "keys" / deployment_id, ignore_errors=True)

    # --- reconciliation -----------------------------------------------------

    def reconcile(self, record: DeploymentRecord) -> DeploymentRecord:
        """Mark machines the inventory no longer knows as terminated."""
        if self.state_dir is None or record.status == DELETED:
            return record
        live = {h.machine_id for h in list_instances(self.state_dir)}
        gone = [m for m in record.machines
                if m.machine_id and m.state != TERMINATED and m.machine_id not in live]
        if not gone:
            return record
        for m in gone:
            m.state = TERMINATED
        if record.status == RUNNING:
            record.status = DEGRADED
            record.error = f"machines gone: {', '.join(m.name for m in gone)}"
        log.warning("deployment %s: %s no longer running", record.deployment_id,
                    ", ".join(m.name for m in gone))
        self.save(record)
        return record
