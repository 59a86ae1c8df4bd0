"""
Per-node dispatch contexts. A node's callbacks never run concurrently.

inline: run on the caller's thread under the node's lock (deterministic, used in tests)
thread: one worker thread and FIFO queue per node (used by agents)
"""
import logging
import queue
import threading
from typing import Callable

__all__ = ["Dispatcher", "InlineDispatcher", "ThreadDispatcher", "make_dispatcher"]

log = logging.getLogger(__name__)

Task = Callable[[], None]


class Dispatcher:
    def submit(self, task: Task) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InlineDispatcher(Dispatcher):
    def __init__(self, node: str):
        self.node = node
        self._lock = threading.RLock()

    def submit(self, task: Task) -> None:
        with self._lock:
            try:
                task()
            except Exception:
                log.exception("callback in node %s failed", self.node)


class ThreadDispatcher(Dispatcher):
    _STOP = object()

    def __init__(self, node: str):
        self.node = node
        self._queue: "queue.Queue" = queue.Queue()
        self._thread = threading.Thread(target=self._run, name=f"fog-node-{node}", daemon=True)
        self._thread.start()

    def submit(self, task: Task) -> None:
        self._queue.put(task)

    def _run(self) -> None:
        while True:
            task = self._queue.get()
            if task is self._STOP:
                return
            try:
                task()
            except Exception:
                log.exception("callback in node %s failed", self.node)

    def close(self) -> None:
        self._queue.put(self._STOP)
        if threading.current_thread() is not self._thread:
            self._thread.join(timeout=2.0)


def make_dispatcher(node: str, mode: str) -> Dispatcher:
    if mode == "inline":
        return InlineDispatcher(node)
    if mode == "thread":
        return ThreadDispatcher(node)
    raise ValueError(f"unknown dispatch mode {mode!r}")
