"""Deployment execution: machine agents, node behaviors, the control channel and records."""
from .behaviors import BEHAVIOR_TYPES, Behavior, make_behavior
from .control import CONTROL_TOPIC, REPLY_TOPIC, ControlClient, ControlServer
from .execute import ControlSession, Deployment, Orchestrator
from .record import DEGRADED, DELETED, LAUNCHING, RUNNING, DeploymentRecord, MachineEntry
from .store import StateStore

# orchestrator.agent is left out so `python -m orchestrator.agent` imports it only once

__all__ = [
    "BEHAVIOR_TYPES", "Behavior", "make_behavior",
    "CONTROL_TOPIC", "REPLY_TOPIC", "ControlClient", "ControlServer",
    "ControlSession", "Deployment", "Orchestrator",
    "DEGRADED", "DELETED", "LAUNCHING", "RUNNING", "DeploymentRecord", "MachineEntry",
    "StateStore",
]
