"""Grid geometry, volumes and trilinear warping for ctwarp.

Volumes are numpy arrays in (H, W, D) order. Displacement fields live on the
fixed grid, are stored as (H, W, D, 3) arrays in voxel units and follow the
pull convention ``warped(x) = moving(x + u(x))``. Samples that fall outside
the moving grid see zero.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

from .exceptions import (
    DegenerateVolume, InvalidCoordinate, InvalidParams, OutOfRange, ShapeMismatch, UnknownLabel
)

DEFAULT_NUM_CLASSES = 128

# Corner offsets of a trilinear cell, (0,0,0) first.
_CORNERS = tuple(product((0, 1), repeat=3))


def _as_triple(values, cast, name):
    triple = tuple(cast(v) for v in values)
    if len(triple) != 3:
        raise InvalidParams(f"{name} must have three components, got {len(triple)}")
    return triple


@dataclass(frozen=True)
class Grid:
    """Axis-aligned voxel lattice: dims, mm spacing and mm origin."""

    dims: tuple
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = _as_triple(self.dims, int, "dims")
        spacing = _as_triple(self.spacing, float, "spacing")
        origin = _as_triple(self.origin, float, "origin")
        if any(d < 1 for d in dims):
            raise InvalidParams(f"grid dims must be >= 1, got {dims}")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise InvalidParams(f"grid spacing must be > 0, got {spacing}")
        if not all(np.isfinite(o) for o in origin):
            raise InvalidParams(f"grid origin must be finite, got {origin}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def size(self):
        return self.dims[0] * self.dims[1] * self.dims[2]

    def world(self, index):
        """World (mm) position of a voxel index, or of an (..., 3) index array."""
        return np.asarray(self.origin) + np.asarray(index, dtype=float) * np.asarray(self.spacing)

    def replace(self, dims=None, spacing=None, origin=None):
        return Grid(
            dims if dims is not None else self.dims,
            spacing if spacing is not None else self.spacing,
            origin if origin is not None else self.origin,
        )


def frozen_array(values, dtype, shape, what):
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.shape != tuple(shape):
        if arr.size == int(np.prod(shape)):
            arr = arr.reshape(shape)
        else:
            raise ShapeMismatch(f"{what} has shape {arr.shape}, grid expects {tuple(shape)}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar field on a grid (normalized intensity, HU or weights)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        arr = frozen_array(self.values, np.float64, self.grid.dims, "volume")
        if not np.all(np.isfinite(arr)):
            raise OutOfRange("volume values must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def dims(self):
        return self.grid.dims

    def with_values(self, values):
        return Volume(self.grid, values)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer segmentation on a grid; 0 is background."""

    grid: Grid
    labels: np.ndarray
    num_classes: int = DEFAULT_NUM_CLASSES

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise UnknownLabel("label volume holds non-integer values")
        arr = frozen_array(raw, np.int32, self.grid.dims, "label volume")
        if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
            raise UnknownLabel(
                f"labels must lie in [0, {self.num_classes}), found [{arr.min()}, {arr.max()}]"
            )
        object.__setattr__(self, "labels", arr)

    @property
    def dims(self):
        return self.grid.dims

    def present_labels(self):
        """Sorted label ids present in the volume, background excluded."""
        ids = np.unique(self.labels)
        return [int(i) for i in ids if i != 0]

    def with_labels(self, labels):
        return LabelVolume(self.grid, labels, self.num_classes)


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-voxel displacement on the fixed grid, in voxel units."""

    grid: Grid
    vectors: np.ndarray

    def __post_init__(self):
        arr = frozen_array(self.vectors, np.float64, self.grid.dims + (3,), "displacement field")
        if not np.all(np.isfinite(arr)):
            raise OutOfRange("displacement vectors must be finite")
        object.__setattr__(self, "vectors", arr)

    @property
    def dims(self):
        return self.grid.dims

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.dims + (3,)))

    @classmethod
    def constant(cls, grid, vector):
        return cls(grid, np.broadcast_to(np.asarray(vector, dtype=float), grid.dims + (3,)))


@dataclass(frozen=True, eq=False)
class RegistrationPair:
    """Moving and fixed PET, CT and segmentation of one subject."""

    moving_pet: Volume
    fixed_pet: Volume
    moving_ct: Volume
    fixed_ct: Volume
    moving_seg: LabelVolume
    fixed_seg: LabelVolume
    subject: str = ""
    tracer_moving: str = "FDG"
    tracer_fixed: str = "PSMA"

    def __post_init__(self):
        moving = (self.moving_pet, self.moving_ct, self.moving_seg)
        fixed = (self.fixed_pet, self.fixed_ct, self.fixed_seg)
        dims = {v.dims for v in moving + fixed}
        if len(dims) != 1:
            raise ShapeMismatch(f"all six pair volumes must share dims, got {sorted(dims)}")
        if len({v.grid for v in moving}) != 1:
            raise ShapeMismatch("moving PET, CT and segmentation must share one grid")
        if len({v.grid for v in fixed}) != 1:
            raise ShapeMismatch("fixed PET, CT and segmentation must share one grid")

    @property
    def moving_grid(self):
        return self.moving_ct.grid

    @property
    def fixed_grid(self):
        return self.fixed_ct.grid


def identity_points(dims):
    """Voxel index coordinates of a grid as a float (H, W, D, 3) array."""
    axes = [np.arange(n, dtype=np.float64) for n in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


class SamplingPlan:
    """Trilinear corner indices and weights for a fixed set of sample points.

    Built once per displacement field and reused for every volume warped
    through it. Corners outside ``dims`` get weight zero.
    """

    def __init__(self, dims, points):
        points = np.asarray(points, dtype=np.float64)
        if not np.all(np.isfinite(points)):
            raise InvalidCoordinate("sample coordinates must be finite")
        self.dims = tuple(int(d) for d in dims)
        self.shape = points.shape[:-1]
        upper = np.asarray(self.dims, dtype=np.float64) + 1.0
        # anything beyond one cell outside the grid samples zero either way
        points = np.clip(points, -2.0, upper)
        base = np.floor(points)
        self.frac = points - base
        base = base.astype(np.int64)

        self._grad_weights = None
        self.flat_index = []
        self.inside = []
        self.weights = []
        for offset in _CORNERS:
            idx = base + np.asarray(offset)
            inside = np.ones(self.shape, dtype=bool)
            clipped = []
            for k in range(3):
                inside &= (idx[..., k] >= 0) & (idx[..., k] < self.dims[k])
                clipped.append(np.clip(idx[..., k], 0, self.dims[k] - 1))
            self.flat_index.append(np.ravel_multi_index(tuple(clipped), self.dims))
            self.inside.append(inside)
            self.weights.append(self._corner_weight(offset) * inside)

    def _corner_weight(self, offset, skip=None):
        w = np.ones(self.shape)
        for k in range(3):
            if k == skip:
                continue
            w = w * (self.frac[..., k] if offset[k] else 1.0 - self.frac[..., k])
        return w

    def _check(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.dims:
            raise ShapeMismatch(f"sampled array has shape {values.shape}, plan expects {self.dims}")
        return values.ravel()

    def sample(self, values):
        """Trilinear interpolation of ``values`` at the plan points."""
        flat = self._check(values)
        out = np.zeros(self.shape)
        for index, weight in zip(self.flat_index, self.weights):
            out += weight * flat[index]
        return out

    def _gradient_weights(self):
        # d(weight)/dp_k per corner, computed on first use and kept for reuse
        if self._grad_weights is None:
            self._grad_weights = [
                [
                    (1.0 if offset[k] else -1.0) * self._corner_weight(offset, skip=k) * inside
                    for k in range(3)
                ]
                for offset, inside in zip(_CORNERS, self.inside)
            ]
        return self._grad_weights

    def sample_gradient(self, values):
        """Spatial derivative of the interpolant at the plan points, (..., 3)."""
        return self.sample_with_gradient(values)[1]

    def sample_with_gradient(self, values):
        """Interpolated values and their spatial derivative in one gather pass."""
        flat = self._check(values)
        out = np.zeros(self.shape)
        grad = np.zeros(self.shape + (3,))
        for index, weight, dweights in zip(self.flat_index, self.weights, self._gradient_weights()):
            v = flat[index]
            out += weight * v
            for k in range(3):
                grad[..., k] += dweights[k] * v
        return out, grad


def trilinear_sample(vol, p):
    """Trilinearly interpolate ``vol`` at the continuous voxel coordinate ``p``."""
    p = np.asarray(p, dtype=np.float64).reshape(1, 3)
    if not np.all(np.isfinite(p)):
        raise InvalidCoordinate(f"non-finite sample coordinate {p.ravel().tolist()}")
    return float(SamplingPlan(vol.dims, p).sample(vol.values)[0])


def warp_plan(moving_grid, ddf):
    """Sampling plan of the points x + u(x) in the moving grid."""
    return SamplingPlan(moving_grid.dims, identity_points(ddf.dims) + ddf.vectors)


def warp_scalar(vol, ddf, plan=None):
    """Resample ``vol`` at x + u(x) for every voxel x of the field's grid."""
    if plan is None:
        plan = warp_plan(vol.grid, ddf)
    return Volume(ddf.grid, plan.sample(vol.values))


def _upstream_array(upstream, dims):
    arr = np.asarray(upstream.values if isinstance(upstream, Volume) else upstream, dtype=np.float64)
    if arr.shape != tuple(dims):
        raise ShapeMismatch(f"upstream gradient has shape {arr.shape}, field grid is {tuple(dims)}")
    return arr


def warp_scalar_adjoint(vol, ddf, upstream, plan=None):
    """Gradient of <upstream, warp_scalar(vol, ddf)> with respect to the field.

    Returns an (H, W, D, 3) array on the field grid.
    """
    up = _upstream_array(upstream, ddf.dims)
    if plan is None:
        plan = warp_plan(vol.grid, ddf)
    return up[..., None] * plan.sample_gradient(vol.values)


def warp_labels_nearest(seg, ddf):
    """Nearest-neighbour label warp; .5 ties round up, outside is background."""
    points = identity_points(ddf.dims) + ddf.vectors
    idx = np.floor(points + 0.5).astype(np.int64)
    inside = np.ones(ddf.dims, dtype=bool)
    clipped = []
    for k in range(3):
        inside &= (idx[..., k] >= 0) & (idx[..., k] < seg.dims[k])
        clipped.append(np.clip(idx[..., k], 0, seg.dims[k] - 1))
    labels = np.where(inside, seg.labels[tuple(clipped)], 0)
    return LabelVolume(ddf.grid, labels, seg.num_classes)


def indicator(seg, class_id):
    """Binary float indicator of ``class_id``."""
    class_id = int(class_id)
    if not 0 <= class_id < seg.num_classes:
        raise UnknownLabel(f"class {class_id} outside [0, {seg.num_classes})")
    return Volume(seg.grid, (seg.labels == class_id).astype(np.float64))


def warp_indicator(seg, class_id, ddf, plan=None):
    """Trilinear warp of the soft indicator of ``class_id``."""
    return warp_scalar(indicator(seg, class_id), ddf, plan=plan)


def resize_trilinear(vol, new_dims):
    """Corner-aligned trilinear resize; the field of view (dims * spacing) is kept."""
    new_dims = _as_triple(new_dims, int, "new_dims")
    if any(d < 1 for d in new_dims):
        raise InvalidParams(f"new dims must be >= 1, got {new_dims}")
    if new_dims == vol.dims:
        return Volume(vol.grid, vol.values)

    axes = []
    for n_in, n_out in zip(vol.dims, new_dims):
        if n_out == 1:
            axes.append(np.zeros(1))
        else:
            axes.append(np.clip(np.arange(n_out) * (n_in - 1) / (n_out - 1), 0.0, n_in - 1))
    points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    out = SamplingPlan(vol.dims, points).sample(vol.values)
    # convex weights can drift by an ulp past the input range
    out = np.clip(out, vol.values.min(), vol.values.max())

    spacing = tuple(s * n_in / n_out for s, n_in, n_out in zip(vol.grid.spacing, vol.dims, new_dims))
    return Volume(vol.grid.replace(dims=new_dims, spacing=spacing), out)


def normalize_unit(vol):
    """Min-max normalize a volume to [0, 1]."""
    lo = vol.values.min()
    hi = vol.values.max()
    if not hi > lo:
        raise DegenerateVolume(f"cannot normalize a constant volume (value {lo})")
    return vol.with_values((vol.values - lo) / (hi - lo))


def normalize_pair(pair):
    """Normalize the four intensity volumes of a pair to [0, 1]."""
    return RegistrationPair(
        normalize_unit(pair.moving_pet), normalize_unit(pair.fixed_pet),
        normalize_unit(pair.moving_ct), normalize_unit(pair.fixed_ct),
        pair.moving_seg, pair.fixed_seg,
        pair.subject, pair.tracer_moving, pair.tracer_fixed,
    )


def identical_pair(pair, use="fixed"):
    """Pair whose moving volumes are copies of one side of ``pair``."""
    if use not in ("fixed", "moving"):
        raise InvalidParams(f"use must be 'fixed' or 'moving', got {use!r}")
    if use == "fixed":
        pet, ct, seg = pair.fixed_pet, pair.fixed_ct, pair.fixed_seg
    else:
        pet, ct, seg = pair.moving_pet, pair.moving_ct, pair.moving_seg
    return RegistrationPair(pet, pet, ct, ct, seg, seg, pair.subject, pair.tracer_fixed, pair.tracer_fixed)


def spatial_gradient(ddf):
    """Forward-difference Jacobian of the field, (H, W, D, 3, 3) with [..., i, j] = du_i/dx_j.

    The difference at the last voxel along each axis is zero.
    """
    v = ddf.vectors
    grad = np.zeros(v.shape + (3,))
    for j in range(3):
        if ddf.dims[j] < 2:
            continue
        region = [slice(None)] * 3
        region[j] = slice(0, -1)
        grad[tuple(region) + (slice(None), j)] = np.diff(v, axis=j)
    return grad
