import numpy as np
import pytest
from scipy import ndimage

from ctwarp.core._1_volume_core import Grid, LabelVolume, RegistrationPair, Volume
from ctwarp.core._4_engine import RegistrationConfig
from ctwarp.core._2_weight_map import WeightMapParams

BLOCK_DIMS = (12, 12, 12)


def shift_array(arr, shift):
    """out(x) = arr(x - shift) for integer shifts, zero where x - shift is outside."""
    out = np.zeros_like(arr)
    src = []
    dst = []
    for s, n in zip(shift, arr.shape[:3]):
        if s >= 0:
            src.append(slice(0, n - s))
            dst.append(slice(s, n))
        else:
            src.append(slice(-s, n))
            dst.append(slice(0, n + s))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def block_scene(dims=BLOCK_DIMS, smooth=0.0):
    """CT, PET and labels of a small body with a bone block and one organ, all inside the grid."""
    labels = np.zeros(dims, dtype=np.int32)
    labels[2:-2, 2:-2, 2:-2] = 1
    labels[4:7, 4:7, 4:7] = 2
    labels[7:9, 3:6, 5:9] = 5
    ct = np.choose(labels, [0.0, 0.4, 1.0, 0, 0, 0.55])
    pet = np.choose(labels, [0.0, 0.2, 0.1, 0, 0, 1.0])
    if smooth:
        ct = ndimage.gaussian_filter(ct, smooth)
        ct = ct / ct.max()
    return ct, pet, labels


def make_pair(fixed_ct, moving_ct, fixed_pet, moving_pet, fixed_seg, moving_seg, spacing=(1.0, 1.0, 1.0)):
    grid = Grid(fixed_ct.shape, spacing)
    return RegistrationPair(
        Volume(grid, moving_pet), Volume(grid, fixed_pet),
        Volume(grid, moving_ct), Volume(grid, fixed_ct),
        LabelVolume(grid, moving_seg), LabelVolume(grid, fixed_seg),
        subject="block",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def block_pair():
    """Factory: fixed block scene and a moving copy translated by ``shift`` voxels.

    With moving(x) = fixed(x - shift) the field u = shift aligns the pair.
    """
    def build(shift=(0, 0, 0), smooth=0.0, spacing=(1.0, 1.0, 1.0)):
        ct, pet, labels = block_scene(smooth=smooth)
        return make_pair(
            ct, shift_array(ct, shift), pet, shift_array(pet, shift),
            labels, shift_array(labels, shift), spacing,
        )
    return build


@pytest.fixture
def tiny_config():
    """Few iterations and scaled weights so the data terms matter at test size."""
    return RegistrationConfig(
        weight_params=WeightMapParams(mu_r=4.5, delta=3.0, gamma=2.0),
        pyramid_factors=(2, 1),
        iters_per_level=(15, 15),
        label_sample_count=3,
        seed=7,
    )
