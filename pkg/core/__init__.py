"""Core building blocks: clocks, pooling, state-file persistence."""
from .clock import Clock, MonotonicClock, SimulatedClock
from .persist import atomic_write_json, file_lock, read_json
from .pool import ObjectPool

__all__ = ["Clock", "MonotonicClock", "SimulatedClock", "ObjectPool",
           "atomic_write_json", "file_lock", "read_json"]
