"""Evaluation metrics: histogram MI, hard Dice, centroid TRE and paired t-tests."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import betainc

from ._1_volume_core import LabelVolume, Volume, spatial_gradient, warp_labels_nearest, warp_scalar
from .exceptions import (
    DegenerateSample, EmptyLabel, EmptyMask, InvalidParams, OutOfRange, ShapeMismatch
)

DEFAULT_MI_BINS = 32


@dataclass
class MetricsReport:
    """Per-label and summary metrics of one registered pair."""

    mi: float
    dice_per_label: dict
    dice_mean: float
    tre_per_label: dict
    tre_mean: float
    labels_evaluated: list
    excluded_labels: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "mi": self.mi,
            "dice_mean": self.dice_mean,
            "tre_mean": self.tre_mean,
            "labels_evaluated": list(self.labels_evaluated),
            "per_label": [
                {
                    "label": label,
                    "dice": self.dice_per_label[label],
                    "tre_mm": self.tre_per_label.get(label),
                }
                for label in self.labels_evaluated
            ],
            "excluded_labels": [
                {"label": label, "reason": reason} for label, reason in sorted(self.excluded_labels.items())
            ],
        }


def _array(x):
    return np.asarray(x.values if isinstance(x, Volume) else x, dtype=np.float64)


def _mask(x):
    if isinstance(x, LabelVolume):
        return x.labels != 0
    return np.asarray(x, dtype=bool)


def mutual_information(a, b, bins=DEFAULT_MI_BINS):
    """Histogram mutual information (nats) of two [0, 1] volumes."""
    a = _array(a).ravel()
    b = _array(b).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch(f"MI inputs differ in size: {a.size} vs {b.size}")
    bins = int(bins)
    if bins < 2:
        raise InvalidParams(f"MI needs at least 2 bins, got {bins}", key="mi_bins")
    if a.size == 0:
        return 0.0
    if min(a.min(), b.min()) < 0.0 or max(a.max(), b.max()) > 1.0:
        raise OutOfRange("MI inputs must lie in [0, 1]")

    # the last bin is closed, so 1.0 lands in it
    counts, _, _ = np.histogram2d(a, b, bins=bins, range=[[0.0, 1.0], [0.0, 1.0]])
    n = counts.sum()
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    i, j = np.nonzero(counts)
    h = counts[i, j]
    terms = (h / n) * np.log(h * n / (rows[i] * cols[j]))
    # fsum is order independent, which keeps MI(a, b) == MI(b, a) exactly
    return math.fsum(terms.tolist())


def hard_dice(fixed_seg, warped_seg, label):
    """Binary Dice of ``label``; 1 when both masks are empty, 0 when one is."""
    if fixed_seg.dims != warped_seg.dims:
        raise ShapeMismatch(f"segmentations differ in dims: {fixed_seg.dims} vs {warped_seg.dims}")
    a = fixed_seg.labels == label
    b = warped_seg.labels == label
    size_a = int(a.sum())
    size_b = int(b.sum())
    if size_a == 0 and size_b == 0:
        return 1.0
    if size_a == 0 or size_b == 0:
        return 0.0
    return 2.0 * int(np.logical_and(a, b).sum()) / (size_a + size_b)


def _centroid(mask):
    return np.asarray(ndimage.center_of_mass(mask.astype(np.float64)))


def tre(fixed_seg, warped_seg, label, spacing):
    """Distance in mm between the centroids of ``label`` in both masks."""
    if fixed_seg.dims != warped_seg.dims:
        raise ShapeMismatch(f"segmentations differ in dims: {fixed_seg.dims} vs {warped_seg.dims}")
    a = fixed_seg.labels == label
    b = warped_seg.labels == label
    if not a.any():
        raise EmptyLabel(f"label {label} is empty in the fixed segmentation", label=label)
    if not b.any():
        raise EmptyLabel(f"label {label} is empty in the warped segmentation", label=label)
    offset = (_centroid(b) - _centroid(a)) * np.asarray(spacing, dtype=np.float64)
    return float(np.linalg.norm(offset))


def evaluate(pair, ddf, bins=DEFAULT_MI_BINS):
    """Warp the moving PET and segmentation through ``ddf`` and score them."""
    warped_pet = warp_scalar(pair.moving_pet, ddf)
    warped_seg = warp_labels_nearest(pair.moving_seg, ddf)
    mi = mutual_information(pair.fixed_pet, np.clip(warped_pet.values, 0.0, 1.0), bins=bins)

    dice = {}
    distances = {}
    excluded = {}
    spacing = pair.fixed_grid.spacing
    for label in pair.fixed_seg.present_labels():
        # an organ erased by the warp scores Dice 0 but has no centroid
        dice[label] = hard_dice(pair.fixed_seg, warped_seg, label)
        try:
            distances[label] = tre(pair.fixed_seg, warped_seg, label, spacing)
        except EmptyLabel as e:
            excluded[label] = str(e)

    labels = sorted(dice)
    dice_mean = float(np.mean([dice[k] for k in labels])) if labels else float("nan")
    tre_mean = float(np.mean(list(distances.values()))) if distances else float("nan")
    return MetricsReport(mi, dice, dice_mean, distances, tre_mean, labels, excluded)


def paired_t_test(x, y):
    """Two-sided paired t-test; returns (t, p)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeMismatch(f"paired samples must be 1-D of equal length, got {x.shape} and {y.shape}")
    n = x.size
    if n < 2:
        raise InvalidParams(f"paired t-test needs at least 2 pairs, got {n}")
    d = x - y
    if np.all(d == d[0]):
        raise DegenerateSample("all paired differences are equal")
    sd = float(np.std(d, ddof=1))
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    df = n - 1
    # two-sided tail of Student's t via the regularized incomplete beta
    p = float(betainc(0.5 * df, 0.5, df / (df + t * t)))
    return t, p


def gradient_energy(ddf, mask):
    """Mean Frobenius energy sum_ij (du_i/dx_j)^2 of the field inside ``mask``."""
    mask = _mask(mask)
    if mask.shape != ddf.dims:
        raise ShapeMismatch(f"mask dims {mask.shape} differ from field dims {ddf.dims}")
    if not mask.any():
        raise EmptyMask("gradient energy over an empty mask")
    energy = np.sum(spatial_gradient(ddf) ** 2, axis=(-2, -1))
    return float(energy[mask].mean())


def jacobian_determinant(ddf):
    """Per-voxel det(I + grad u) with forward differences."""
    return np.linalg.det(np.eye(3) + spatial_gradient(ddf))


def summarize(samples):
    """Mean and sample standard deviation (0 for a single sample)."""
    values = np.asarray(samples, dtype=np.float64)
    if values.size == 0:
        return float("nan"), float("nan")
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


def significance_marker(p):
    """'**' for p < 0.001, '*' for p < 0.05, '' otherwise."""
    if p is None or not np.isfinite(p):
        return ""
    if p < 0.001:
        return "**"
    if p < 0.05:
        return "*"
    return ""
