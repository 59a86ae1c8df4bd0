"""
Machine agents as child processes or in-process threads.

A process agent is started with `python -m orchestrator.agent`, prints one JSON hello line
({"public_key", "port", "pid"}) and then reads provisioning ops from stdin, one JSON
object per line:
    {"op": "authorize", "keys": [b64, ...], "link": {...} | null}
    {"op": "reset"}
Closing stdin detaches the agent; it keeps serving until SIGTERM.
"""
import base64
import json
import logging
import os
import queue
import signal
import subprocess
import sys
import threading
import time
from pathlib import Path
from typing import Any, Iterable, Optional

from constants import AGENT_HELLO_TIMEOUT_S
from errors import AgentError

from .inventory import pid_alive
from .link import LinkModel

__all__ = ["AgentProcess", "kill_pid", "AGENT_MODES"]

log = logging.getLogger(__name__)

AGENT_MODES = ("process", "thread", "none")
_ROOT = Path(__file__).resolve().parent.parent


def kill_pid(pid: int, grace: float = 2.0) -> bool:
    """SIGTERM, then SIGKILL after `grace` seconds. False if the pid was already gone."""
    if not pid_alive(pid):
        return False
    try:
        os.kill(pid, signal.SIGTERM)
    except ProcessLookupError:
        return False
    deadline = time.monotonic() + grace
    while time.monotonic() < deadline:
        if not pid_alive(pid):
            return True
        time.sleep(0.02)
    try:
        os.kill(pid, signal.SIGKILL)
    except ProcessLookupError:
        pass
    return True


class AgentProcess:
    """
    Usage:
        agent = AgentProcess("slam", workdir, mode="process").start()
        agent.authorize([robot_public, operator_public], link=LinkModel(10e6, 3.05))
        ...
        agent.kill()
    """

    def __init__(self, machine: str, workdir: Path, *, mode: str = "process",
                 host: str = "127.0.0.1"):
        if mode not in ("process", "thread"):
            raise ValueError(f"agent mode must be process or thread, not {mode!r}")
        self.machine = machine
        self.workdir = Path(workdir)
        self.mode = mode
        self.host = host
        self.public_key = b""
        self.endpoint: Optional[tuple] = None
        self.pid: Optional[int] = None
        self._proc: Optional[subprocess.Popen] = None
        self._agent: Any = None
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self._io_lock = threading.Lock()

    @property
    def agent(self) -> Any:
        """The in-process MachineAgent (thread mode only)."""
        return self._agent

    def start(self, timeout: float = AGENT_HELLO_TIMEOUT_S) -> "AgentProcess":
        self.workdir.mkdir(parents=True, exist_ok=True)
        if self.mode == "thread":
            from orchestrator.agent import MachineAgent

            self._agent = MachineAgent(self.machine, self.workdir, host=self.host).start()
            self._hello(self._agent.hello())
            return self
        env = dict(os.environ)
        env["PYTHONPATH"] = os.pathsep.join(filter(None, [str(_ROOT), env.get("PYTHONPATH")]))
        log_file = open(self.workdir / "agent.log", "ab")
        try:
            self._proc = subprocess.Popen(
                [sys.executable, "-m", "orchestrator.agent", "--machine", self.machine,
                 "--workdir", str(self.workdir), "--host", self.host],
                stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=log_file,
                cwd=str(_ROOT), env=env, text=True, start_new_session=True)
        finally:
            log_file.close()
        threading.Thread(target=self._read_stdout, name=f"fog-agent-out-{self.machine}",
                         daemon=True).start()
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            line = None
        if not line:
            self.kill()
            raise AgentError(f"agent for {self.machine} did not say hello "
                             f"(see {self.workdir / 'agent.log'})")
        self._hello(json.loads(line))
        return self

    def _hello(self, hello: dict) -> None:
        self.public_key = base64.b64decode(hello["public_key"])
        self.endpoint = (self.host, int(hello["port"]))
        self.pid = hello.get("pid") if self.mode == "process" else None
        log.info("agent %s up: %s:%d pid=%s", self.machine, self.host, self.endpoint[1], self.pid)

    def _read_stdout(self) -> None:
        try:
            for line in self._proc.stdout:
                self._lines.put(line.strip())
        except (ValueError, OSError):
            pass    # stdout closed by kill()
        finally:
            self._lines.put(None)

    def _op(self, op: dict) -> None:
        if self.mode == "thread":
            self._agent.provision_op(op)
            return
        if self._proc is None or self._proc.poll() is not None:
            raise AgentError(f"agent for {self.machine} is not running")
        with self._io_lock:
            try:
                self._proc.stdin.write(json.dumps(op) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, ValueError) as e:
                raise AgentError(f"agent for {self.machine}: {e}") from e

    def authorize(self, keys: Iterable[bytes], link: Optional[LinkModel] = None) -> None:
        self._op({"op": "authorize",
                  "keys": [base64.b64encode(k).decode() for k in keys],
                  "link": link.to_dict() if link is not None else None})

    def reset(self) -> None:
        """Stop nodes and forget authorizations (machine goes back to a warm pool)."""
        self._op({"op": "reset"})

    def detach(self) -> None:
        """Stop feeding the provisioning channel; the process keeps serving."""
        if self._proc is not None and self._proc.stdin:
            with self._io_lock:
                self._proc.stdin.close()

    def alive(self) -> bool:
        if self.mode == "thread":
            return self._agent is not None and self._agent.alive
        return self._proc is not None and self._proc.poll() is None

    def kill(self) -> None:
        if self.mode == "thread":
            if self._agent is not None:
                self._agent.stop()
            return
        if self._proc is None:
            return
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait(timeout=2.0)
        for stream in (self._proc.stdin, self._proc.stdout):
            if stream:
                try:
                    stream.close()
                except OSError:
                    pass
