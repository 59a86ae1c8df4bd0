"""
Request/reply over the acked pub/sub control topic.

A request is a JSON object {"id", "op", "args"} published on CONTROL_TOPIC to one peer; the
agent answers on REPLY_TOPIC with {"id", "ok", "result"} or {"id", "ok": false, "error",
"error_type"}. Several clients may talk to one agent at once; replies are matched by id.
"""
import json
import logging
import threading
import uuid
from typing import Any, Callable, Optional

from constants import CONTROL_PREFIX
from errors import AgentError, DeliveryFailed, FogError
from pubsub.runtime import ACKED, Message, PubSubRuntime

__all__ = ["CONTROL_TOPIC", "REPLY_TOPIC", "ControlClient", "ControlServer"]

log = logging.getLogger(__name__)

CONTROL_TOPIC = f"{CONTROL_PREFIX}/control"
REPLY_TOPIC = f"{CONTROL_PREFIX}/reply"
DEFAULT_TIMEOUT_S = 30.0

Handler = Callable[[str, dict], Any]


class ControlClient:
    """
    Usage:
        client = ControlClient(robot_runtime)
        status = client.request(agent_public_key, "status")
    """

    def __init__(self, runtime: PubSubRuntime, node: str = "fog-control-client"):
        self.runtime = runtime
        self.node = node
        self._replies: dict[str, dict] = {}
        self._lock = threading.Lock()
        runtime.add_node(node)
        runtime.advertise(node, CONTROL_TOPIC)
        runtime.subscribe(node, REPLY_TOPIC, self._on_reply, ACKED)

    def _on_reply(self, message: Message) -> None:
        try:
            reply = json.loads(message.payload)
            req_id = reply["id"]
        except (ValueError, KeyError, TypeError):
            log.debug("%s: malformed control reply", self.runtime.machine)
            return
        with self._lock:
            self._replies[req_id] = reply
        transport = getattr(self.runtime.endpoint, "transport", None)
        if transport is not None and hasattr(transport, "notify"):
            transport.notify()

    def request(self, peer: bytes, op: str, timeout: float = DEFAULT_TIMEOUT_S, **args) -> Any:
        req_id = uuid.uuid4().hex
        payload = json.dumps({"id": req_id, "op": op, "args": args}).encode()
        try:
            self.runtime.publish(self.node, CONTROL_TOPIC, payload, to=[peer], acked=True,
                                 wait=True, timeout=timeout)
        except DeliveryFailed as e:
            raise AgentError(f"{op}: agent unreachable: {e}") from e
        if not self.runtime.wait_until(lambda: req_id in self._replies, timeout):
            raise AgentError(f"{op}: no reply within {timeout:.1f}s")
        with self._lock:
            reply = self._replies.pop(req_id)
        if not reply.get("ok"):
            raise AgentError(f"{op}: {reply.get('error_type', 'error')}: {reply.get('error')}")
        return reply.get("result")

    def close(self) -> None:
        self.runtime.remove_node(self.node)


class ControlServer:
    def __init__(self, runtime: PubSubRuntime, handler: Handler, node: str = "fog-agent"):
        self.runtime = runtime
        self.handler = handler
        self.node = node
        self.served = 0
        runtime.add_node(node)
        runtime.advertise(node, REPLY_TOPIC)
        runtime.subscribe(node, CONTROL_TOPIC, self._on_request, ACKED)

    def _on_request(self, message: Message) -> None:
        try:
            request = json.loads(message.payload)
            req_id, op = request["id"], request["op"]
            args = request.get("args") or {}
        except (ValueError, KeyError, TypeError):
            log.warning("%s: malformed control request from %s", self.runtime.machine,
                        message.source or "?")
            return
        reply: dict[str, Any] = {"id": req_id}
        try:
            reply["result"] = self.handler(op, args)
            reply["ok"] = True
        except FogError as e:
            reply.update(ok=False, error=str(e), error_type=type(e).__name__)
        except Exception as e:
            log.exception("%s: control op %s failed", self.runtime.machine, op)
            reply.update(ok=False, error=str(e), error_type=type(e).__name__)
        self.served += 1
        self._reply(message.peer, reply)

    def _reply(self, peer: Optional[bytes], reply: dict) -> None:
        payload = json.dumps(reply, default=str).encode()
        if peer is None:
            self.runtime.publish(self.node, REPLY_TOPIC, payload, scope="local")
            return
        try:
            self.runtime.publish(self.node, REPLY_TOPIC, payload, to=[peer], acked=True)
        except FogError as e:
            log.warning("%s: reply %s not sent: %s", self.runtime.machine, reply["id"], e)
