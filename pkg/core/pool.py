"""
Object pool with optional lazy growth.
Backs the warm-pool backend: machines are pre-started and handed out on acquire.
"""
import threading
from collections import deque
from typing import Callable, Generic, Hashable, TypeVar

from errors import CapacityExhausted

__all__ = ["ObjectPool"]

T = TypeVar("T", bound=Hashable)


class ObjectPool(Generic[T]):
    """
    Thread-safe pool of pre-built objects.

    Usage:
        pool = ObjectPool(factory=start_machine, initial=2, grow=False)
        machine = pool.acquire()
        ...
        pool.release(machine)   # back to the pool instead of being destroyed

    Conservation: acquires - releases == outstanding, never negative.
    """

    __slots__ = ("_factory", "_pool", "_active", "_max_size", "_grow", "_lock",
                 "acquires", "releases", "grown")

    def __init__(
        self,
        factory: Callable[[], T],
        initial: int = 0,
        max_size: int = 500,
        grow: bool = True,
    ):
        """
        Args:
            factory: Callable that creates a new instance
            initial: Pre-allocate this many objects
            max_size: Cap on idle objects kept for reuse
            grow: Create on demand when the pool is empty
        """
        if initial < 0:
            raise ValueError("initial must be >= 0")
        self._factory = factory
        self._pool: deque[T] = deque()
        self._active: set[T] = set()
        self._max_size = max_size
        self._grow = grow
        self._lock = threading.Lock()
        self.acquires = 0
        self.releases = 0
        self.grown = 0

        # Pre-warm pool
        for _ in range(initial):
            self._pool.append(factory())

    def acquire(self) -> T:
        """Get an object from the pool, or create one if growth is enabled."""
        with self._lock:
            if self._pool:
                obj = self._pool.popleft()
            elif not self._grow:
                raise CapacityExhausted("warm pool is empty and growth is disabled")
            else:
                obj = None
            if obj is not None:
                self._active.add(obj)
                self.acquires += 1
                return obj

        # Build outside the lock; factories may block for a full boot.
        obj = self._factory()
        with self._lock:
            self._active.add(obj)
            self.acquires += 1
            self.grown += 1
        return obj

    def add(self, obj: T) -> None:
        """Put an object that was built elsewhere into the idle pool."""
        with self._lock:
            self._pool.append(obj)

    def release(self, obj: T) -> bool:
        """Return an object to the pool. False if it was not checked out."""
        with self._lock:
            if obj not in self._active:
                return False
            self._active.discard(obj)
            self.releases += 1
            if len(self._pool) < self._max_size:
                self._pool.append(obj)
            return True

    def discard(self, obj: T) -> None:
        """Drop an object for good (e.g. broken machine)."""
        with self._lock:
            if obj in self._active:
                self._active.discard(obj)
                self.releases += 1
            elif obj in self._pool:
                self._pool.remove(obj)

    def drain(self) -> list[T]:
        """Remove and return every idle object."""
        with self._lock:
            idle = list(self._pool)
            self._pool.clear()
            return idle

    @property
    def available(self) -> int:
        """Objects ready in pool."""
        return len(self._pool)

    @property
    def active(self) -> int:
        """Objects currently in use."""
        return len(self._active)

    @property
    def outstanding(self) -> int:
        return self.acquires - self.releases

    @property
    def total(self) -> int:
        return self.available + self.active
