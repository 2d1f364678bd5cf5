"""CT-guided voxel-wise regularization weights.

The moving CT is min-max normalized, raised to ``gamma`` and mapped affinely
onto ``[mu_r - delta, mu_r + delta]``. Dense (high HU) tissue gets the
strongest smoothness penalty, air and soft tissue the weakest.
"""

from dataclasses import dataclass

import numpy as np

from ._1_volume_core import Grid, Volume, frozen_array, normalize_unit
from .exceptions import DegenerateVolume, InvalidParams, OutOfRange, ShapeMismatch

# Table 1 best row and the ablation setting for delta and gamma
DEFAULT_MU_R = 4500.0
DEFAULT_DELTA = 3000.0
DEFAULT_GAMMA = 2.0


@dataclass(frozen=True)
class WeightMapParams:
    """Mean weight ``mu_r``, margin ``delta`` and exponent ``gamma``."""

    mu_r: float = DEFAULT_MU_R
    delta: float = DEFAULT_DELTA
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        for name in ("mu_r", "delta", "gamma"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise InvalidParams(f"{name} must be finite, got {value}", key=name)
            object.__setattr__(self, name, value)
        if self.delta < 0:
            raise InvalidParams(f"delta must be >= 0, got {self.delta}", key="delta")
        if self.mu_r - self.delta < 0:
            raise InvalidParams(
                f"mu_r - delta must be >= 0 (mu_r={self.mu_r}, delta={self.delta})", key="delta"
            )
        if self.gamma <= 0:
            raise InvalidParams(f"gamma must be > 0, got {self.gamma}", key="gamma")

    @property
    def lower(self):
        return self.mu_r - self.delta

    @property
    def upper(self):
        return self.mu_r + self.delta


@dataclass(frozen=True, eq=False)
class WeightMap:
    """Per-voxel regularization weights on a grid."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        arr = frozen_array(self.weights, np.float64, self.grid.dims, "weight map")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise OutOfRange("weights must be finite and non-negative")
        object.__setattr__(self, "weights", arr)

    @property
    def dims(self):
        return self.grid.dims

    def scaled(self, factor):
        return WeightMap(self.grid, self.weights * float(factor))


def normalize_ct(ct):
    """Min-max normalize the moving CT over the whole volume."""
    try:
        return normalize_unit(ct)
    except DegenerateVolume as e:
        raise DegenerateVolume(f"moving CT is constant: {e}") from e


def gamma_map(norm_ct, gamma):
    """Apply the power map C^gamma to a [0, 1] volume."""
    gamma = float(gamma)
    if not gamma > 0:
        raise InvalidParams(f"gamma must be > 0, got {gamma}", key="gamma")
    values = norm_ct.values
    if values.min() < 0.0 or values.max() > 1.0:
        raise OutOfRange(f"normalized CT must lie in [0, 1], found [{values.min()}, {values.max()}]")
    if gamma == 1.0:
        return norm_ct.with_values(values)
    return norm_ct.with_values(np.power(values, gamma))


def project_weights(mapped, mu_r, delta):
    """Affine map of [0, 1] onto [mu_r - delta, mu_r + delta]."""
    mu_r = float(mu_r)
    delta = float(delta)
    if delta < 0 or mu_r - delta < 0:
        raise InvalidParams(f"need 0 <= delta <= mu_r, got mu_r={mu_r}, delta={delta}", key="delta")
    values = mapped.values
    if values.min() < 0.0 or values.max() > 1.0:
        raise OutOfRange(f"mapped CT must lie in [0, 1], found [{values.min()}, {values.max()}]")
    return WeightMap(mapped.grid, (mu_r - delta) + 2.0 * delta * values)


def build_weight_map(moving_ct, params):
    """Weight map of the moving CT: project(gamma_map(normalize_ct(ct)))."""
    mapped = gamma_map(normalize_ct(moving_ct), params.gamma)
    return project_weights(mapped, params.mu_r, params.delta)


def uniform_weight_map(grid, lam):
    """Constant weight map ``w = lam`` (global regularization baseline)."""
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise InvalidParams(f"lambda must be >= 0, got {lam}", key="mu_r")
    return WeightMap(grid, np.full(grid.dims, lam))


def weight_map_volume(w):
    """Scalar volume view of a weight map, for writing to disk."""
    return Volume(w.grid, w.weights)


def weight_statistics(w, seg):
    """Mean, min and max weight per label present in ``seg`` (background included)."""
    if seg.dims != w.dims:
        raise ShapeMismatch(f"segmentation dims {seg.dims} differ from weight map dims {w.dims}")
    stats = {}
    for label in np.unique(seg.labels):
        sel = w.weights[seg.labels == label]
        stats[int(label)] = {
            "voxels": int(sel.size),
            "mean": float(sel.mean()),
            "min": float(sel.min()),
            "max": float(sel.max()),
        }
    return stats
