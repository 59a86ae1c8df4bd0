"""Provider abstraction, mock-cloud/local-process/warm-pool backends, images and link emulation."""
from .backend import BACKENDS, Backend, make_backend, register_backend
from .catalog import PhaseDelays, ProviderCatalog, Region, builtin_catalog, load_catalog
from .images import ImageRegistry
from .inventory import Inventory, list_instances
from .link import Link, LinkModel, emulated_send
from .local import LocalProcessBackend
from .mock import MockCloudBackend
from .spawn import AgentProcess
from .types import (INSTALLING, PROVISIONING, READY, TERMINATED, ImageRecord, InstanceType,
                    MachineHandle, PhaseSpan)
from .warmpool import WarmPoolBackend

__all__ = [
    "BACKENDS", "Backend", "make_backend", "register_backend",
    "PhaseDelays", "ProviderCatalog", "Region", "builtin_catalog", "load_catalog",
    "ImageRegistry", "Inventory", "list_instances",
    "Link", "LinkModel", "emulated_send",
    "LocalProcessBackend", "MockCloudBackend", "WarmPoolBackend", "AgentProcess",
    "INSTALLING", "PROVISIONING", "READY", "TERMINATED", "ImageRecord", "InstanceType",
    "MachineHandle", "PhaseSpan",
]
