import json
import logging
import math
import threading
from datetime import datetime
from pathlib import Path
from typing import Optional

__all__ = ["configure_logging", "set_journal", "log_event"]

_FORMAT = "[fogmesh] %(levelname)s %(name)s: %(message)s"

_journal_path: Optional[Path] = None
_journal_lock = threading.Lock()
_start_time = datetime.now()

_log = logging.getLogger(__name__)


def configure_logging(verbosity: int = 0) -> None:
    """verbosity: -1 quiet, 0 warnings, 1 info, 2+ debug."""
    if verbosity < 0:
        level = logging.ERROR
    elif verbosity == 0:
        level = logging.WARNING
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = logging.DEBUG

    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_fogmesh", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(_FORMAT))
    handler._fogmesh = True
    root.addHandler(handler)
    root.setLevel(level)


def set_journal(path: Optional[Path]) -> None:
    """Point the event journal at `path` (None disables it)."""
    global _journal_path
    with _journal_lock:
        _journal_path = Path(path) if path is not None else None
        if _journal_path is not None:
            _journal_path.parent.mkdir(parents=True, exist_ok=True)


def log_event(event_type: str, **details) -> None:
    now = datetime.now()

    event = {
        "timestamp": now.strftime("%H:%M:%S.%f")[:-3],
        "elapsed_s": math.floor((now - _start_time).total_seconds()),
        "type": event_type,
        **details,
    }

    with _journal_lock:
        if _journal_path is None:
            return
        try:
            with open(_journal_path, "a") as f:
                f.write(json.dumps(event, default=str) + "\n")
        except OSError as e:
            _log.debug("journal write failed: %s", e)
