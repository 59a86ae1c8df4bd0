"""
Per-machine agent: owns the machine's overlay endpoint and pub/sub runtime, receives its
workspace, launches and stops nodes, and serves control sessions.

Run as a process:
    python -m orchestrator.agent --machine slam --workdir /tmp/fog/slam

It prints one hello line ({"public_key", "port", "pid", "machine"}), then applies
provisioning ops read from stdin (see provision.spawn). Control requests arrive over the
overlay on the acked control topic.
"""
import argparse
import base64
import json
import logging
import os
import shlex
import shutil
import signal
import subprocess
import sys
import threading
from pathlib import Path
from typing import Any, Optional

from constants import HEARTBEAT_INTERVAL_S
from errors import AgentError, FogError, MachineNotReady
from launch.spec import NodeSpec
from logger import configure_logging, log_event, set_journal
from overlay.endpoint import OverlayEndpoint
from overlay.keys import KeyPair, b64, generate_keypair, unb64
from overlay.transport import UdpTransport
from provision.link import LinkModel
from pubsub.runtime import PubSubRuntime

from .behaviors import Behavior, make_behavior
from .control import ControlServer

__all__ = ["MachineAgent", "main", "BUILTIN_COMMANDS"]

log = logging.getLogger(__name__)

BUILTIN_COMMANDS = ("status", "nodes", "topics", "peers", "ping")
EXEC_TIMEOUT_S = 30.0


class MachineAgent:
    """
    Usage:
        agent = MachineAgent("slam", workdir).start()
        print(agent.hello())
        agent.provision_op({"op": "authorize", "keys": [robot_b64], "link": None})
    """

    def __init__(self, machine: str, workdir: Path, *, host: str = "127.0.0.1", port: int = 0,
                 keypair: Optional[KeyPair] = None,
                 announce_interval: float = HEARTBEAT_INTERVAL_S):
        self.machine = machine
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        key_path = self.workdir / "agent.key"
        if keypair is None:
            keypair = KeyPair.load(key_path) if key_path.exists() else generate_keypair()
            keypair.save(key_path)
        self.keypair = keypair
        self.transport = UdpTransport(host, port)
        self.endpoint = OverlayEndpoint(keypair, self.transport, name=machine)
        self.runtime = PubSubRuntime(machine, self.endpoint, dispatch="thread",
                                     announce_interval=announce_interval)
        self.server: Optional[ControlServer] = None
        self.manifest: dict[str, NodeSpec] = {}
        self.behaviors: dict[str, Behavior] = {}
        self.launch_order: list[str] = []
        self.peer_configured = False
        self.alive = False
        self._authorized: set[bytes] = set()
        self._lock = threading.RLock()

    @property
    def workspace(self) -> Path:
        return self.workdir / "workspace"

    def start(self) -> "MachineAgent":
        self.server = ControlServer(self.runtime, self.handle)
        self.runtime.start()
        self.alive = True
        log.info("agent %s listening on %s:%d", self.machine, *self.transport.address)
        return self

    def hello(self) -> dict:
        return {"public_key": b64(self.keypair.public), "port": self.transport.address[1],
                "pid": os.getpid(), "machine": self.machine}

    # --- provisioning channel ---------------------------------------------

    def provision_op(self, op: dict) -> None:
        kind = op.get("op")
        if kind == "authorize":
            for key in op.get("keys", []):
                raw = unb64(key)
                self.endpoint.authorize(raw)
                self._authorized.add(raw)
            if op.get("link"):
                self.transport.shape(None, LinkModel(**op["link"]))
        elif kind == "reset":
            self.reset()
        else:
            raise AgentError(f"unknown provisioning op {kind!r}")

    def reset(self) -> None:
        """Back to a blank machine: no nodes, no workspace, no authorized peers."""
        with self._lock:
            self._stop_nodes(list(self.behaviors))
            self.manifest.clear()
            self.peer_configured = False
            for key in list(self._authorized):
                self.endpoint.revoke(key)
                self.runtime.peers.remove(key)
            self._authorized.clear()
        shutil.rmtree(self.workspace, ignore_errors=True)

    # --- control ops --------------------------------------------------------

    def handle(self, op: str, args: dict) -> Any:
        handler = getattr(self, f"op_{op}", None)
        if handler is None:
            raise AgentError(f"unknown control op {op!r}")
        return handler(**args)

    def op_ping(self) -> dict:
        return {"machine": self.machine, "instant": self.runtime.clock.now()}

    def op_workspace(self, files: Optional[dict] = None, nodes: Optional[list] = None) -> dict:
        root = self.workspace.resolve()
        root.mkdir(parents=True, exist_ok=True)
        total = 0
        for rel, data in (files or {}).items():
            target = (root / rel).resolve()
            if root not in target.parents:
                raise AgentError(f"workspace path escapes the workspace: {rel}")
            raw = base64.b64decode(data)
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(raw)
            total += len(raw)
        with self._lock:
            for doc in nodes or []:
                node = NodeSpec.from_dict(doc)
                self.manifest[node.name] = node
        (root / "manifest.json").write_text(json.dumps(
            [n.to_dict() for n in self.manifest.values()], indent=2))
        log_event("workspace_received", machine=self.machine, files=len(files or {}), bytes=total)
        return {"files": len(files or {}), "bytes": total, "nodes": sorted(self.manifest)}

    def op_peers(self, authorize: Optional[list] = None, connect: Optional[list] = None) -> dict:
        for peer in authorize or []:
            key = unb64(peer["public_key"])
            self.endpoint.authorize(key, tuple(peer["endpoint"]) if peer.get("endpoint") else None)
            self._authorized.add(key)
        for peer in connect or []:
            key = unb64(peer["public_key"])
            self._authorized.add(key)
            self.endpoint.connect(key, tuple(peer["endpoint"]))
        self.peer_configured = True
        return {"sessions": len(self.endpoint.peers())}

    def op_launch(self, nodes: Optional[list] = None) -> dict:
        if not self.peer_configured:
            raise MachineNotReady(f"{self.machine}: peers are not configured yet")
        with self._lock:
            names = nodes if nodes is not None else list(self.manifest)
            missing = [n for n in names if n not in self.manifest]
            if missing:
                raise AgentError(f"{self.machine}: no manifest for {', '.join(missing)}")
            started = []
            for name in names:
                if name in self.behaviors:
                    continue
                behavior = make_behavior(self.runtime, self.manifest[name], workdir=self.workdir)
                behavior.start()
                self.behaviors[name] = behavior
                self.launch_order.append(name)
                started.append(name)
        self.runtime.announce()
        log_event("nodes_launched", machine=self.machine, nodes=started)
        return {"started": started}

    def op_stop(self, nodes: Optional[list] = None) -> dict:
        with self._lock:
            names = nodes if nodes is not None else list(self.behaviors)
            return {"stopped": self._stop_nodes(names)}

    def _stop_nodes(self, names: list[str]) -> list[str]:
        stopped = []
        for name in reversed(list(self.launch_order)):
            if name not in names or name not in self.behaviors:
                continue
            try:
                self.behaviors.pop(name).stop()
            except Exception:
                log.exception("%s: stopping %s failed", self.machine, name)
            self.launch_order.remove(name)
            stopped.append(name)
        return stopped

    def op_status(self) -> dict:
        with self._lock:
            nodes = {name: b.status() for name, b in self.behaviors.items()}
        return {
            "machine": self.machine,
            "alive": self.alive,
            "peer_configured": self.peer_configured,
            "nodes": nodes,
            "peers": self.runtime.peers.snapshot(self.runtime.clock.now()),
            "metrics": self.runtime.metrics(),
        }

    def op_exec(self, command: Any = "status", timeout: float = EXEC_TIMEOUT_S) -> dict:
        """Run a command. Built-ins answer from agent state; anything else runs in the workdir."""
        argv = shlex.split(command) if isinstance(command, str) else [str(c) for c in command]
        if not argv:
            raise AgentError("empty command")
        builtin = argv[0]
        if builtin == "status":
            return {"returncode": 0, "result": self.op_status()}
        if builtin == "nodes":
            return {"returncode": 0, "result": sorted(self.behaviors)}
        if builtin == "topics":
            return {"returncode": 0, "result": {
                "subscribed": self.runtime.local_topics(),
                "advertised": sorted(self.runtime.advertised_topics())}}
        if builtin == "peers":
            return {"returncode": 0, "result": self.runtime.peers.snapshot(self.runtime.clock.now())}
        if builtin == "ping":
            return {"returncode": 0, "result": self.op_ping()}
        cwd = self.workspace if self.workspace.is_dir() else self.workdir
        try:
            proc = subprocess.run(argv, cwd=str(cwd), capture_output=True, text=True,
                                  timeout=timeout)
        except FileNotFoundError:
            return {"returncode": 127, "stdout": "", "stderr": f"{argv[0]}: command not found\n"}
        except subprocess.TimeoutExpired:
            return {"returncode": 124, "stdout": "", "stderr": f"timed out after {timeout}s\n"}
        return {"returncode": proc.returncode, "stdout": proc.stdout, "stderr": proc.stderr}

    def stop(self) -> None:
        if not self.alive:
            return
        self.alive = False
        with self._lock:
            self._stop_nodes(list(self.behaviors))
        self.runtime.close()
        self.endpoint.close()
        log.info("agent %s stopped", self.machine)


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="orchestrator.agent", description="fogmesh machine agent")
    parser.add_argument("--machine", required=True)
    parser.add_argument("--workdir", required=True, type=Path)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=0)
    parser.add_argument("-v", "--verbose", action="count", default=1)
    args = parser.parse_args(argv)

    configure_logging(args.verbose)
    set_journal(args.workdir / "events.jsonl")
    agent = MachineAgent(args.machine, args.workdir, host=args.host, port=args.port).start()
    done = threading.Event()

    def on_term(signum, frame):
        done.set()
        raise SystemExit(0)

    signal.signal(signal.SIGTERM, on_term)
    try:
        print(json.dumps(agent.hello()), flush=True)
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            try:
                agent.provision_op(json.loads(line))
            except (ValueError, FogError) as e:
                log.error("provisioning op rejected: %s", e)
        log.info("provisioning channel closed; serving until terminated")
        done.wait()
    except (SystemExit, KeyboardInterrupt):
        pass
    finally:
        agent.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
