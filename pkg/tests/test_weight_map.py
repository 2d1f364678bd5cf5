import numpy as np
import pytest

from ctwarp.core._1_volume_core import Grid, LabelVolume, Volume
from ctwarp.core._2_weight_map import (
    WeightMapParams, build_weight_map, gamma_map, normalize_ct, project_weights,
    uniform_weight_map, weight_map_volume, weight_statistics,
)
from ctwarp.core.exceptions import DegenerateVolume, InvalidParams, OutOfRange


def line(values):
    values = np.asarray(values, dtype=float)
    return Volume(Grid((values.size, 1, 1)), values)


def test_normalize_ct():
    out = normalize_ct(line([-1000.0, 0.0, 1000.0]))
    np.testing.assert_array_equal(out.values.ravel(), [0.0, 0.5, 1.0])
    with pytest.raises(DegenerateVolume):
        normalize_ct(line([40.0, 40.0]))


def test_gamma_map():
    vol = line([0.0, 0.5, 1.0])
    np.testing.assert_array_equal(gamma_map(vol, 1.0).values, vol.values)
    np.testing.assert_array_equal(gamma_map(vol, 2.0).values.ravel(), [0.0, 0.25, 1.0])
    np.testing.assert_array_equal(gamma_map(line([0.0, 1.0]), 3.7).values.ravel(), [0.0, 1.0])
    with pytest.raises(OutOfRange):
        gamma_map(line([0.0, 1.2]), 2.0)
    with pytest.raises(InvalidParams):
        gamma_map(vol, 0.0)


def test_project_weights():
    out = project_weights(line([0.0, 1.0, 0.25]), 4500.0, 3000.0)
    np.testing.assert_array_equal(out.weights.ravel(), [1500.0, 7500.0, 3000.0])
    with pytest.raises(InvalidParams) as err:
        project_weights(line([0.0, 1.0]), 2000.0, 3000.0)
    assert err.value.key == "delta"


def test_build_weight_map_fixtures():
    params = WeightMapParams(4500.0, 3000.0, 2.0)
    two = build_weight_map(line([0.0, 1000.0]), params)
    np.testing.assert_array_equal(two.weights.ravel(), [1500.0, 7500.0])
    three = build_weight_map(line([0.0, 500.0, 1000.0]), params)
    np.testing.assert_array_equal(three.weights.ravel(), [1500.0, 3000.0, 7500.0])
    with pytest.raises(DegenerateVolume):
        build_weight_map(line([0.0, 0.0, 0.0]), params)


def test_uniform_weight_map():
    grid = Grid((3, 2, 2))
    np.testing.assert_array_equal(uniform_weight_map(grid, 4500.0).weights, 4500.0)
    np.testing.assert_array_equal(uniform_weight_map(grid, 0.0).weights, 0.0)
    with pytest.raises(InvalidParams):
        uniform_weight_map(grid, -1.0)


def test_zero_delta_collapses_to_uniform(rng):
    ct = Volume(Grid((4, 4, 4)), rng.uniform(-1000.0, 1500.0, size=(4, 4, 4)))
    for gamma in (0.5, 1.0, 2.0):
        w = build_weight_map(ct, WeightMapParams(4500.0, 0.0, gamma))
        np.testing.assert_array_equal(w.weights, uniform_weight_map(ct.grid, 4500.0).weights)


def test_params_validation():
    with pytest.raises(InvalidParams) as err:
        WeightMapParams(2000.0, 3000.0, 2.0)
    assert err.value.key == "delta"
    with pytest.raises(InvalidParams) as err:
        WeightMapParams(4500.0, 3000.0, 0.0)
    assert err.value.key == "gamma"
    with pytest.raises(InvalidParams):
        WeightMapParams(4500.0, -1.0, 2.0)
    params = WeightMapParams()
    assert (params.lower, params.upper) == (1500.0, 7500.0)


def test_weight_map_properties_on_random_ct(rng):
    params = WeightMapParams(4500.0, 3000.0, 2.0)
    linear = WeightMapParams(4500.0, 3000.0, 1.0)
    for _ in range(100):
        ct = Volume(Grid((3, 4, 5)), rng.uniform(-1000.0, 2000.0, size=(3, 4, 5)))
        w = build_weight_map(ct, params).weights.ravel()
        w_linear = build_weight_map(ct, linear).weights.ravel()
        hu = ct.values.ravel()

        # bounds, attained at the extreme HU voxels
        assert w.min() >= params.lower and w.max() <= params.upper
        assert w[np.argmin(hu)] == params.lower
        assert w[np.argmax(hu)] == params.upper

        # monotone in HU
        order = np.argsort(hu, kind="stable")
        assert np.all(np.diff(w[order]) >= 0)

        # gamma = 2 lowers every mid-range weight
        mid = (hu > hu.min()) & (hu < hu.max())
        assert np.all(w[mid] < w_linear[mid])


def test_weight_statistics():
    grid = Grid((4, 1, 1))
    w = project_weights(Volume(grid, [0.0, 1.0, 0.5, 0.5]), 10.0, 10.0)
    seg = LabelVolume(grid, [0, 2, 1, 1])
    stats = weight_statistics(w, seg)
    assert sorted(stats) == [0, 1, 2]
    assert stats[1] == {"voxels": 2, "mean": 10.0, "min": 10.0, "max": 10.0}
    assert stats[2]["mean"] == 20.0
    np.testing.assert_array_equal(weight_map_volume(w).values, w.weights)
