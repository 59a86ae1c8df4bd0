"""
Image registry, persisted as images.json in the state directory.
The reserved image "default" always exists and means the full install path.
"""
import logging
import secrets
import threading
from pathlib import Path
from typing import Iterable, Optional

from constants import DEFAULT_IMAGE
from core.persist import atomic_write_json, file_lock, read_json
from errors import ImageInUse, UnknownImage

from .types import ImageRecord

__all__ = ["ImageRegistry"]

log = logging.getLogger(__name__)


class ImageRegistry:
    """
    Usage:
        images = ImageRegistry(state_dir / "images.json")   # or ImageRegistry() in memory
        images.add(record)
        images.newest("mock-cloud", "us-west-1", tag="gpu")
    """

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._mem: dict[str, ImageRecord] = {}

    def _load(self) -> dict[str, ImageRecord]:
        if self.path is None:
            return dict(self._mem)
        raw = read_json(self.path, default=[]) or []
        return {d["image_id"]: ImageRecord.from_dict(d) for d in raw}

    def _save(self, records: dict[str, ImageRecord]) -> None:
        if self.path is None:
            self._mem = dict(records)
            return
        atomic_write_json(self.path, [r.to_dict() for r in records.values()])

    def _locked(self):
        if self.path is None:
            return self._lock
        return file_lock(self.path.with_suffix(".lock"))

    @staticmethod
    def new_id() -> str:
        return f"img-{secrets.token_hex(4)}"

    def add(self, record: ImageRecord) -> ImageRecord:
        with self._locked():
            records = self._load()
            if record.image_id in records or record.image_id == DEFAULT_IMAGE:
                raise ValueError(f"image {record.image_id} already registered")
            records[record.image_id] = record
            self._save(records)
        log.info("registered image %s (%s/%s)", record.image_id, record.backend, record.region)
        return record

    def get(self, image_id: str) -> ImageRecord:
        record = self._load().get(image_id)
        if record is None:
            raise UnknownImage(f"unknown image {image_id!r}")
        return record

    def exists(self, image_id: str) -> bool:
        return image_id == DEFAULT_IMAGE or image_id in self._load()

    def preinstalled(self, image_id: str) -> bool:
        if image_id == DEFAULT_IMAGE:
            return False
        return self.get(image_id).preinstalled

    def list(self, backend: Optional[str] = None, region: Optional[str] = None) -> list[ImageRecord]:
        out = [r for r in self._load().values()
               if (backend is None or r.backend == backend) and (region is None or r.region == region)]
        return sorted(out, key=lambda r: (r.created_at, r.image_id))

    def newest(self, backend: str, region: str, tag: Optional[str] = None) -> Optional[ImageRecord]:
        matches = [r for r in self.list(backend, region) if tag is None or tag in r.capability_tags]
        return matches[-1] if matches else None

    def remove(self, image_id: str, in_use: Iterable[str] = ()) -> ImageRecord:
        """Delete an image unless a live deployment still references it."""
        if image_id in set(in_use):
            raise ImageInUse(f"image {image_id} is used by a running deployment")
        with self._locked():
            records = self._load()
            record = records.pop(image_id, None)
            if record is None:
                raise UnknownImage(f"unknown image {image_id!r}")
            self._save(records)
        log.info("removed image %s", image_id)
        return record
