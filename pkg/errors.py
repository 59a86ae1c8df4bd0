"""
Error hierarchy shared by every package.
Each class carries the CLI exit code it maps to: 2 for usage/spec errors, 1 otherwise.
"""
from typing import Optional

__all__ = [
    "FogError", "UsageError", "SpecError", "DanglingReference", "DuplicateName", "UnknownBackend",
    "ResolutionError", "UnsatisfiableRequirements", "MissingImage", "PlanningError",
    "ProvisionError", "CapacityExhausted", "UnknownRegion", "UnknownInstanceType",
    "UnknownMachine", "UnknownImage", "ImageInUse",
    "OverlayError", "AuthenticationError", "HandshakeTimeout", "TamperedDatagram",
    "ReplayRejected", "UnknownSession", "SessionExpired", "PayloadTooLarge",
    "AddressExhausted", "EntropyError",
    "PubSubError", "TopicTooLong", "DuplicateSubscription", "NotAdvertised",
    "MessageTooLarge", "DeliveryFailed", "MalformedEnvelope",
    "CodecError", "DimensionOverflow", "ResyncRequired", "CorruptInput",
    "DeploymentError", "UnknownDeployment", "MachineNotReady", "AgentError", "InjectedCrash",
    "BenchError", "UnknownSuite",
]


class FogError(Exception):
    exit_code = 1


class UsageError(FogError):
    exit_code = 2


# --- launch documents -------------------------------------------------------

class SpecError(FogError):
    """Invalid launch document. Renders as `spec:<line>: <field>: <message>`."""

    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.message = message
        self.line = line
        self.field = field
        super().__init__(self._render())

    def _render(self) -> str:
        where = "spec"
        if self.line is not None:
            where += f":{self.line}"
        if self.field:
            where += f": {self.field}"
        return f"{where}: {self.message}"


class DanglingReference(SpecError):
    pass


class DuplicateName(SpecError):
    pass


class UnknownBackend(SpecError):
    pass


# --- launch-time resolution -------------------------------------------------

class ResolutionError(FogError):
    pass


class UnsatisfiableRequirements(ResolutionError):
    def __init__(self, dimension: str, detail: str = ""):
        self.dimension = dimension
        msg = f"no instance type satisfies the {dimension} requirement"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class MissingImage(ResolutionError):
    pass


class PlanningError(FogError):
    pass


# --- provisioning -----------------------------------------------------------

class ProvisionError(FogError):
    pass


class CapacityExhausted(ProvisionError):
    pass


class UnknownRegion(ProvisionError):
    pass


class UnknownInstanceType(ProvisionError):
    pass


class UnknownMachine(ProvisionError):
    pass


class UnknownImage(ProvisionError):
    pass


class ImageInUse(ProvisionError):
    pass


# --- overlay ----------------------------------------------------------------

class OverlayError(FogError):
    pass


class AuthenticationError(OverlayError):
    pass


class HandshakeTimeout(OverlayError):
    pass


class TamperedDatagram(OverlayError):
    pass


class ReplayRejected(OverlayError):
    pass


class UnknownSession(OverlayError):
    pass


class SessionExpired(OverlayError):
    pass


class PayloadTooLarge(OverlayError):
    pass


class AddressExhausted(OverlayError):
    pass


class EntropyError(OverlayError):
    pass


# --- pub/sub ----------------------------------------------------------------

class PubSubError(FogError):
    pass


class TopicTooLong(PubSubError):
    pass


class DuplicateSubscription(PubSubError):
    pass


class NotAdvertised(PubSubError):
    pass


class MessageTooLarge(PubSubError):
    pass


class DeliveryFailed(PubSubError):
    pass


class MalformedEnvelope(PubSubError):
    pass


# --- codec ------------------------------------------------------------------

class CodecError(FogError):
    pass


class DimensionOverflow(CodecError):
    pass


class ResyncRequired(CodecError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"delta references frame {got}, decoder holds {expected}")


class CorruptInput(CodecError):
    pass


# --- orchestration ----------------------------------------------------------

class DeploymentError(FogError):
    pass


class UnknownDeployment(DeploymentError):
    pass


class MachineNotReady(DeploymentError):
    pass


class AgentError(DeploymentError):
    pass


class InjectedCrash(BaseException):
    """Simulated orchestrator kill between two phases (tests only)."""

    def __init__(self, after_step: str):
        self.after_step = after_step
        super().__init__(f"injected crash after {after_step}")


# --- bench ------------------------------------------------------------------

class BenchError(FogError):
    pass


class UnknownSuite(BenchError):
    exit_code = 2
