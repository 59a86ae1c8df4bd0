import pytest

from core.clock import SimulatedClock
from core.persist import atomic_write_json, file_lock, read_json
from core.pool import ObjectPool
from errors import CapacityExhausted


def test_simulated_clock_sleep_advances_and_set_never_goes_back():
    clock = SimulatedClock(1.0)
    clock.sleep(0.5)
    assert clock.now() == pytest.approx(1.5)
    clock.set(1.0)
    assert clock.now() == pytest.approx(1.5)
    clock.set(4.0)
    assert clock.now() == pytest.approx(4.0)
    clock.advance(-3.0)
    assert clock.now() == pytest.approx(4.0)


def test_pool_hands_out_prewarmed_objects_first():
    made = []

    def factory():
        made.append(object())
        return made[-1]

    pool = ObjectPool(factory, initial=2)
    assert pool.available == 2
    first = pool.acquire()
    assert first is made[0]
    assert pool.grown == 0
    pool.acquire()
    pool.acquire()
    assert pool.grown == 1
    assert len(made) == 3


def test_pool_conservation():
    pool = ObjectPool(object, initial=3)
    taken = [pool.acquire() for _ in range(3)]
    assert pool.outstanding == 3
    for obj in taken[:2]:
        assert pool.release(obj)
    assert pool.outstanding == 1
    assert pool.acquires - pool.releases == pool.active == 1
    assert pool.total == 3


def test_pool_without_growth_raises_when_empty():
    pool = ObjectPool(object, initial=1, grow=False)
    pool.acquire()
    with pytest.raises(CapacityExhausted):
        pool.acquire()


def test_pool_release_of_unknown_object_is_refused():
    pool = ObjectPool(object, initial=1)
    assert pool.release(object()) is False
    assert pool.releases == 0


def test_pool_discard_drops_for_good():
    pool = ObjectPool(object, initial=1, grow=False)
    obj = pool.acquire()
    pool.discard(obj)
    assert pool.outstanding == 0
    assert pool.available == 0


def test_atomic_write_then_read(tmp_path):
    path = tmp_path / "nested" / "doc.json"
    atomic_write_json(path, {"b": 2, "a": [1, 2]})
    assert read_json(path) == {"a": [1, 2], "b": 2}
    assert [p.name for p in path.parent.iterdir()] == ["doc.json"]


def test_read_json_default_for_missing_file(tmp_path):
    assert read_json(tmp_path / "missing.json", default={}) == {}


def test_file_lock_is_reentrant_across_sequential_uses(tmp_path):
    lock = tmp_path / "x.lock"
    with file_lock(lock):
        pass
    with file_lock(lock):
        assert lock.exists()
