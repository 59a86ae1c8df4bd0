"""
CLI configuration.

Precedence, lowest first: built-in defaults, <state_dir>/config.yaml, environment
(FOGMESH_STATE_DIR, FOGMESH_SCALE, FOGMESH_BACKEND), command-line flags.

    # ~/.fogmesh/config.yaml
    default_backend: mock-cloud
    scale: 0.01
    output: table
    agent_mode: process
"""
import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Optional

import yaml

from constants import BACKENDS, DEFAULT_SCALE
from errors import UsageError

__all__ = ["CliConfig", "load_config", "default_state_dir", "OUTPUT_FORMATS", "ENV_STATE_DIR",
           "ENV_SCALE", "ENV_BACKEND"]

log = logging.getLogger(__name__)

ENV_STATE_DIR = "FOGMESH_STATE_DIR"
ENV_SCALE = "FOGMESH_SCALE"
ENV_BACKEND = "FOGMESH_BACKEND"
OUTPUT_FORMATS = ("table", "json")
CLI_AGENT_MODES = ("process", "thread")


def default_state_dir(env: Optional[Mapping[str, str]] = None) -> Path:
    env = os.environ if env is None else env
    return Path(env.get(ENV_STATE_DIR) or Path.home() / ".fogmesh").expanduser()


@dataclass(frozen=True)
class CliConfig:
    state_dir: Path
    default_backend: str = "mock-cloud"
    scale: float = DEFAULT_SCALE
    output: str = "table"
    agent_mode: str = "process"

    def __post_init__(self):
        if not self.scale > 0:
            raise UsageError(f"scale must be > 0, got {self.scale}")
        if self.default_backend not in BACKENDS:
            raise UsageError(f"unknown backend {self.default_backend!r} "
                             f"(known: {', '.join(BACKENDS)})")
        if self.output not in OUTPUT_FORMATS:
            raise UsageError(f"output must be one of {', '.join(OUTPUT_FORMATS)}")
        if self.agent_mode not in CLI_AGENT_MODES:
            raise UsageError(f"agent_mode must be one of {', '.join(CLI_AGENT_MODES)}")

    def ensure_state_dir(self) -> Path:
        try:
            self.state_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise UsageError(f"cannot create state directory {self.state_dir}: {e}") from e
        return self.state_dir

    @property
    def catalog_path(self) -> Path:
        return self.state_dir / "catalog.yaml"

    @property
    def journal_path(self) -> Path:
        return self.state_dir / "events.jsonl"


def _read_file(path: Path) -> dict:
    if not path.exists():
        return {}
    try:
        doc = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as e:
        raise UsageError(f"{path}: {e}") from e
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: expected a mapping")
    known = {f.name for f in fields(CliConfig)} - {"state_dir"}
    unknown = set(doc) - known
    if unknown:
        raise UsageError(f"{path}: unknown keys {sorted(unknown)}")
    return doc


def load_config(state_dir: Optional[Path] = None, env: Optional[Mapping[str, str]] = None,
                **overrides) -> CliConfig:
    """
    Args:
        state_dir: --state-dir flag, wins over the environment
        overrides: flag values; None means "not given"
    """
    env = os.environ if env is None else env
    root = Path(state_dir).expanduser() if state_dir else default_state_dir(env)
    values: dict = dict(_read_file(root / "config.yaml"))
    if env.get(ENV_SCALE):
        try:
            values["scale"] = float(env[ENV_SCALE])
        except ValueError:
            raise UsageError(f"{ENV_SCALE} must be a number, got {env[ENV_SCALE]!r}") from None
    if env.get(ENV_BACKEND):
        values["default_backend"] = env[ENV_BACKEND]
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "scale" in values:
        values["scale"] = float(values["scale"])
    config = CliConfig(root, **values)
    log.debug("config: %s", config)
    return config

