import numpy as np
import pytest

from ctwarp.core._1_volume_core import DisplacementField, Grid
from ctwarp.core._5_metrics import evaluate, gradient_energy, jacobian_determinant
from ctwarp.core._6_phantom import (
    BODY_LABEL, BONE_LABEL, FIRST_ORGAN_LABEL, LUNG_LABELS, PhantomSpec, endpoint_error,
    generate_phantom, pearson_in_mask,
)
from ctwarp.core.exceptions import EmptyMask, InvalidParams, ShapeMismatch

SMALL = dict(dims=(32, 32, 40), n_soft_organs=3, max_displacement=1.5, bone_translation=0.5)


@pytest.fixture(scope="module")
def phantom():
    return generate_phantom(PhantomSpec(seed=3, **SMALL))


def test_phantom_is_deterministic(phantom):
    again = generate_phantom(PhantomSpec(seed=3, **SMALL))
    np.testing.assert_array_equal(again.gt_ddf.vectors, phantom.gt_ddf.vectors)
    np.testing.assert_array_equal(again.pair.moving_pet.values, phantom.pair.moving_pet.values)
    np.testing.assert_array_equal(again.pair.fixed_pet.values, phantom.pair.fixed_pet.values)
    np.testing.assert_array_equal(again.pair.fixed_seg.labels, phantom.pair.fixed_seg.labels)

    other = generate_phantom(PhantomSpec(seed=4, **SMALL))
    assert not np.array_equal(other.gt_ddf.vectors, phantom.gt_ddf.vectors)


def test_phantom_layout(phantom):
    pair = phantom.pair
    assert pair.fixed_grid == pair.moving_grid == Grid((32, 32, 40), (3.0, 3.0, 3.0))
    expected = [BODY_LABEL, BONE_LABEL, *LUNG_LABELS] + [FIRST_ORGAN_LABEL + k for k in range(3)]
    assert pair.moving_seg.present_labels() == expected
    assert pair.tracer_moving == "A" and pair.tracer_fixed == "B"
    for vol in (pair.moving_pet, pair.fixed_pet):
        assert vol.values.min() == 0.0 and vol.values.max() == 1.0
    assert pair.moving_ct.values.max() == 1000.0
    np.testing.assert_array_equal(phantom.body_mask, pair.fixed_seg.labels != 0)


def test_zero_deformation_single_tracer_is_identical():
    spec = PhantomSpec(dims=(16, 16, 16), n_soft_organs=0, max_displacement=0.0,
                       bone_translation=0.0, single_tracer=True)
    pair = generate_phantom(spec).pair
    np.testing.assert_array_equal(generate_phantom(spec).gt_ddf.vectors, 0.0)
    np.testing.assert_array_equal(pair.moving_pet.values, pair.fixed_pet.values)
    np.testing.assert_array_equal(pair.moving_ct.values, pair.fixed_ct.values)
    np.testing.assert_array_equal(pair.moving_seg.labels, pair.fixed_seg.labels)


def test_ground_truth_is_invertible_and_bone_is_rigid(phantom):
    gt = phantom.gt_ddf
    assert np.abs(gt.vectors).max() > 0.0
    assert np.linalg.norm(gt.vectors, axis=-1).max() <= 1.5 + 1e-9
    assert jacobian_determinant(gt)[phantom.body_mask].min() > 0.0
    assert gradient_energy(gt, phantom.bone_mask) < 0.15 * gradient_energy(gt, phantom.soft_mask)


def test_tracers_differ_in_contrast(phantom):
    pair = phantom.pair
    assert pearson_in_mask(pair.moving_pet, pair.fixed_pet, phantom.body_mask) < 0.9
    assert pearson_in_mask(pair.fixed_pet, pair.fixed_pet, phantom.body_mask) == pytest.approx(1.0)


def test_ground_truth_warp_beats_identity(phantom):
    zero = evaluate(phantom.pair, DisplacementField.zeros(phantom.pair.fixed_grid))
    truth = evaluate(phantom.pair, phantom.gt_ddf)
    assert truth.dice_mean > zero.dice_mean


@pytest.mark.parametrize("changes, key", [
    ({"dims": (15, 16, 16)}, "dims"),
    ({"dims": (16, 16, 16), "max_displacement": 2.0}, "max_displacement"),
    ({"dims": (16, 16, 16), "max_displacement": 1.0, "bone_translation": -0.5}, "bone_translation"),
    ({"seed": -1}, "seed"),
])
def test_spec_validation(changes, key):
    with pytest.raises(InvalidParams) as err:
        PhantomSpec(**changes)
    assert err.value.key == key


def test_unplaceable_organs():
    with pytest.raises(InvalidParams) as err:
        generate_phantom(PhantomSpec(dims=(16, 16, 16), n_soft_organs=200, max_displacement=1.0,
                                     bone_translation=0.5))
    assert err.value.key == "n_soft_organs"


def test_spec_dict_round_trip():
    spec = PhantomSpec(seed=9, uptake_a={5: 0.9}, single_tracer=True)
    assert PhantomSpec.from_dict(spec.as_dict()) == spec
    assert PhantomSpec.from_dict(PhantomSpec().as_dict()) == PhantomSpec()


def test_endpoint_error_examples():
    grid = Grid((4, 4, 4), (3.0, 3.0, 3.0))
    mask = np.ones((4, 4, 4), dtype=bool)
    zero = DisplacementField.zeros(grid)

    error = endpoint_error(DisplacementField.constant(grid, (1.0, 0.0, 0.0)), zero, mask)
    assert (error.mean_voxels, error.mean_mm, error.voxels) == (1.0, 3.0, 64)
    error = endpoint_error(DisplacementField.constant(grid, (2.0, 0.0, 0.0)), zero, mask)
    assert error.mean_voxels == 2.0 and error.max_voxels == 2.0

    with pytest.raises(EmptyMask):
        endpoint_error(zero, zero, np.zeros((4, 4, 4), dtype=bool))
    with pytest.raises(ShapeMismatch):
        endpoint_error(zero, DisplacementField.zeros(Grid((4, 4, 5))), mask)
