import random
import statistics
from dataclasses import replace

import pytest

from constants import AUTO, DEFAULT_IMAGE
from errors import MissingImage, PlanningError, ResolutionError, UnsatisfiableRequirements
from launch.resolve import (resolve_image, resolve_machine, resolve_region, resolve_spec,
                            select_instance_type)
from launch.spec import MachineSpec, ResourceSpec, parse_launch_spec
from provision.types import ImageRecord, InstanceType


def test_nearest_region_by_median():
    probes = {"us-east-2": [74.1, 73.9, 300.0], "us-west-1": [6.0, 6.2, 6.1]}
    assert resolve_region(probes) == "us-west-1"


def test_region_tie_goes_to_smaller_id():
    assert resolve_region({"b": [5.0], "a": [5.0]}) == "a"


def test_median_ignores_one_outlier():
    probes = {"a": [10.0, 10.0, 10.0, 10.0, 900.0], "b": [11.0] * 5}
    assert resolve_region(probes) == "a"


@pytest.mark.parametrize("probes", [{}, {"a": []}])
def test_region_without_samples(probes):
    with pytest.raises(ResolutionError):
        resolve_region(probes)


def test_cheapest_fitting_instance(catalog):
    it = select_instance_type(ResourceSpec(4, 8192, 0), catalog.instance_types)
    assert it.type_id == "medium"


def test_gpu_requirement_selects_gpu_type(catalog):
    assert select_instance_type(ResourceSpec(1, 0, 1), catalog.instance_types).type_id == "gpu"


def test_price_tie_prefers_fewer_cores_then_id():
    types = [InstanceType("b", 4, 100, 0, 1.0), InstanceType("a", 4, 100, 0, 1.0),
             InstanceType("c", 2, 100, 0, 1.0)]
    assert select_instance_type(ResourceSpec(2), types).type_id == "c"
    assert select_instance_type(ResourceSpec(3), types).type_id == "a"


def test_unsatisfiable_names_the_tightest_dimension(catalog):
    with pytest.raises(UnsatisfiableRequirements) as err:
        select_instance_type(ResourceSpec(2, 1024, 4), catalog.instance_types)
    assert err.value.dimension == "gpu_units"


def test_empty_catalog():
    with pytest.raises(ResolutionError):
        select_instance_type(ResourceSpec(), [])


def _random_catalog(rng: random.Random) -> list[InstanceType]:
    return [InstanceType(f"t{i}", rng.randint(1, 16), rng.choice([1024, 4096, 16384, 65536]),
                         rng.randint(0, 2), round(rng.uniform(0.01, 3.0), 2))
            for i in range(rng.randint(1, 12))]


def _random_request(rng: random.Random) -> ResourceSpec:
    return ResourceSpec(rng.randint(1, 16), rng.choice([0, 2048, 32768]), rng.randint(0, 2))


def test_selection_matches_brute_force():
    dims = ("cpu_cores", "memory", "gpu_units")
    for seed in range(1000):
        rng = random.Random(seed)
        types = _random_catalog(rng)
        req = _random_request(rng)
        fits = [t for t in types if all(getattr(t, d) >= getattr(req, d) for d in dims)]
        if fits:
            best = min(fits, key=lambda t: (t.price, t.cpu_cores, t.type_id))
            assert select_instance_type(req, types) == best, seed
        else:
            counts = {d: sum(getattr(t, d) >= getattr(req, d) for t in types) for d in dims}
            with pytest.raises(UnsatisfiableRequirements) as err:
                select_instance_type(req, types)
            assert counts[err.value.dimension] == min(counts.values()), seed


@pytest.mark.parametrize("factor", [0.5, 3.0, 1000.0])
def test_selection_ignores_the_price_unit(factor):
    for seed in range(200):
        rng = random.Random(seed)
        types = _random_catalog(rng)
        req = _random_request(rng)
        scaled = [replace(t, price=t.price * factor) for t in types]
        try:
            chosen = select_instance_type(req, types).type_id
        except UnsatisfiableRequirements as e:
            with pytest.raises(UnsatisfiableRequirements) as err:
                select_instance_type(req, scaled)
            assert err.value.dimension == e.dimension
            continue
        assert select_instance_type(req, scaled).type_id == chosen, seed


def test_pinned_image_must_exist(images):
    m = MachineSpec("gpu", "mock-cloud", "us-west-1", "small", "img-missing")
    with pytest.raises(MissingImage):
        resolve_image(m, images)


def test_auto_image_needs_a_region(images):
    with pytest.raises(PlanningError):
        resolve_image(MachineSpec("gpu", "mock-cloud"), images)


def test_auto_image_picks_newest_with_fallback(images):
    m = MachineSpec("gpu", "mock-cloud", "us-west-1", "small", AUTO)
    assert resolve_image(m, images) == DEFAULT_IMAGE
    images.add(ImageRecord("img-old", "mock-cloud", "us-west-1", frozenset({"gpu"}), 1.0))
    images.add(ImageRecord("img-new", "mock-cloud", "us-west-1", frozenset(), 2.0))
    images.add(ImageRecord("img-east", "mock-cloud", "us-east-2", frozenset(), 3.0))
    assert resolve_image(m, images) == "img-new"
    assert resolve_image(m, images, gpu_units=1) == "img-old"


def test_auto_region_without_prober(catalog, images):
    with pytest.raises(PlanningError):
        resolve_machine(MachineSpec("gpu", "mock-cloud"), catalog.instance_types, images)


def test_resolve_spec_binds_every_auto(catalog, images):
    spec = parse_launch_spec("name: x\nmachines:\n  - {name: gpu, backend: mock-cloud}\n")

    def prober(backend):
        assert backend == "mock-cloud"
        return {"us-west-1": [6.0, 6.1, 6.2], "us-east-2": [74.0, 74.0, 74.0]}

    resolved, resolutions = resolve_spec(spec, catalog.instance_types, images, prober)
    gpu = resolved.machine("gpu")
    assert gpu.unresolved == []
    assert (gpu.region, gpu.instance_type, gpu.image) == ("us-west-1", "small", DEFAULT_IMAGE)
    res = resolutions["gpu"]
    assert statistics.median(res.probes["us-west-1"]) == pytest.approx(6.1)
    assert res.to_dict()["probe_medians_ms"]["us-east-2"] == 74.0
