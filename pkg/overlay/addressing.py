from dataclasses import dataclass
from typing import Sequence

from constants import (OVERLAY_MAX_MACHINES, OVERLAY_OPERATOR_HOST, OVERLAY_PREFIX,
                       OVERLAY_ROBOT_HOST, ROBOT_MACHINE)
from errors import AddressExhausted

__all__ = ["OverlayAddress", "assign_overlay_addresses", "operator_address"]


@dataclass(frozen=True, order=True)
class OverlayAddress:
    host_id: int
    machine: str

    def __str__(self) -> str:
        return f"{OVERLAY_PREFIX}.{self.host_id >> 8}.{self.host_id & 0xFF}"

    @property
    def cidr(self) -> str:
        return f"{self}/32"


def assign_overlay_addresses(machines: Sequence[str]) -> dict[str, OverlayAddress]:
    """Robot is host 1; machines follow from 2 in plan order."""
    if len(machines) > OVERLAY_MAX_MACHINES:
        raise AddressExhausted(f"{len(machines)} machines exceed the {OVERLAY_MAX_MACHINES} "
                               "host ids available")
    if len(set(machines)) != len(machines) or ROBOT_MACHINE in machines:
        raise ValueError("machine names must be unique and must not reuse the robot name")
    table = {ROBOT_MACHINE: OverlayAddress(OVERLAY_ROBOT_HOST, ROBOT_MACHINE)}
    for i, name in enumerate(machines):
        table[name] = OverlayAddress(OVERLAY_ROBOT_HOST + 1 + i, name)
    return table


def operator_address() -> OverlayAddress:
    return OverlayAddress(OVERLAY_OPERATOR_HOST, "operator")
