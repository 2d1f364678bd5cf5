"""Weakly supervised registration objective and its field gradient.

L_total = L_sim + L_seg + L_reg, where L_sim is the negated soft Dice of the
fixed CT and the warped moving CT, L_seg the negated mean soft Dice over a
sample of organ masks, and L_reg the CT-weighted smoothness penalty.
"""

from dataclasses import dataclass

import numpy as np

from ._1_volume_core import Volume, indicator, spatial_gradient, warp_plan
from .exceptions import InvalidParams, NotEnoughLabels, OutOfRange, ShapeMismatch

SOFT_DICE_EPS = 1e-6


@dataclass(frozen=True)
class LossBreakdown:
    """The three objective terms and their sum."""

    sim: float
    seg: float
    reg: float
    total: float

    @classmethod
    def from_terms(cls, sim, seg, reg):
        sim, seg, reg = float(sim), float(seg), float(reg)
        return cls(sim, seg, reg, sim + seg + reg)

    def as_dict(self):
        return {"sim": self.sim, "seg": self.seg, "reg": self.reg, "total": self.total}


@dataclass(frozen=True)
class LabelSample:
    """Sorted organ labels drawn for one evaluation of L_seg."""

    class_ids: tuple
    seed: object = None

    @property
    def count(self):
        return len(self.class_ids)


def _values(x):
    return np.asarray(x.values if isinstance(x, Volume) else x, dtype=np.float64)


def _dice_inputs(a, b):
    a = _values(a)
    b = _values(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"soft dice inputs differ in shape: {a.shape} vs {b.shape}")
    if a.size and (a.min() < 0 or b.min() < 0):
        raise OutOfRange("soft dice needs non-negative inputs")
    return a, b


def _dice_terms(a, b):
    num = 2.0 * np.sum(a * b) + SOFT_DICE_EPS
    den = np.sum(a * a) + np.sum(b * b) + SOFT_DICE_EPS
    return num, den


def soft_dice(a, b):
    """Squared-denominator soft Dice (2 sum(ab) + eps) / (sum(a^2) + sum(b^2) + eps)."""
    a, b = _dice_inputs(a, b)
    num, den = _dice_terms(a, b)
    return float(min(num / den, 1.0))


def soft_dice_grad(a, b):
    """Soft Dice value and its gradient with respect to ``b``."""
    a, b = _dice_inputs(a, b)
    num, den = _dice_terms(a, b)
    grad = (2.0 * a * den - num * 2.0 * b) / (den * den)
    return float(min(num / den, 1.0)), grad


def sim_loss(fixed_ct, moving_ct, ddf, plan=None):
    """-soft_dice(fixed CT, moving CT warped by ``ddf``)."""
    if plan is None:
        plan = warp_plan(moving_ct.grid, ddf)
    return -soft_dice(fixed_ct.values, plan.sample(moving_ct.values))


def label_universe(fixed_seg, moving_seg):
    """Sorted labels present in either segmentation, background excluded."""
    return sorted(set(fixed_seg.present_labels()) | set(moving_seg.present_labels()))


def label_sample_stream(seed, level, iteration):
    """Seed entropy for the label draw of one engine iteration."""
    return [int(seed), int(level), int(iteration)]


def sample_labels(universe, count, seed):
    """Draw ``count`` distinct labels uniformly without replacement, sorted."""
    ids = sorted({int(i) for i in universe if int(i) != 0})
    count = int(count)
    if count < 1:
        raise InvalidParams(f"label sample count must be >= 1, got {count}", key="label_sample_count")
    if count > len(ids):
        raise NotEnoughLabels(f"cannot sample {count} labels from a universe of {len(ids)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(ids), size=count, replace=False)
    return LabelSample(tuple(sorted(ids[i] for i in chosen)), seed)


def _seg_indicators(fixed_seg, moving_seg, sample):
    if sample.count == 0:
        raise InvalidParams("label sample is empty", key="label_sample_count")
    for c in sample.class_ids:
        yield c, indicator(fixed_seg, c).values, indicator(moving_seg, c).values


def seg_loss(fixed_seg, moving_seg, ddf, sample, plan=None):
    """Negated mean soft Dice over the sampled classes."""
    if plan is None:
        plan = warp_plan(moving_seg.grid, ddf)
    scores = [
        soft_dice(fixed_ind, plan.sample(moving_ind))
        for _, fixed_ind, moving_ind in _seg_indicators(fixed_seg, moving_seg, sample)
    ]
    return -float(np.mean(scores))


def _check_weights(ddf, w):
    if w.dims != ddf.dims:
        raise ShapeMismatch(f"weight map dims {w.dims} differ from field dims {ddf.dims}")


def reg_loss(ddf, w):
    """Voxel-mean of w(x) * ||grad u(x)||^2 with forward differences."""
    _check_weights(ddf, w)
    energy = np.sum(spatial_gradient(ddf) ** 2, axis=(-2, -1))
    return float(np.sum(w.weights * energy) / energy.size)


def reg_loss_grad(ddf, w):
    """Exact gradient of ``reg_loss`` with respect to the field, (H, W, D, 3)."""
    _check_weights(ddf, w)
    jac = spatial_gradient(ddf)
    flux = w.weights[..., None, None] * jac
    grad = np.zeros(ddf.vectors.shape)
    for j in range(3):
        f = flux[..., j]
        grad -= f
        if ddf.dims[j] < 2:
            continue
        dst = [slice(None)] * 3
        src = [slice(None)] * 3
        dst[j] = slice(1, None)
        src[j] = slice(0, -1)
        grad[tuple(dst)] += f[tuple(src)]
    return grad * (2.0 / jac[..., 0, 0].size)


def evaluate_objective(pair, ddf, w, sample, with_gradient=True):
    """Loss breakdown and (optionally) its gradient, sharing one sampling plan."""
    plan = warp_plan(pair.moving_grid, ddf)
    grad = np.zeros(ddf.vectors.shape) if with_gradient else None

    if with_gradient:
        warped_ct, ct_slope = plan.sample_with_gradient(pair.moving_ct.values)
        dice, d_dice = soft_dice_grad(pair.fixed_ct.values, warped_ct)
        grad -= d_dice[..., None] * ct_slope
    else:
        dice = soft_dice(pair.fixed_ct.values, plan.sample(pair.moving_ct.values))
    sim = -dice

    scores = []
    for _, fixed_ind, moving_ind in _seg_indicators(pair.fixed_seg, pair.moving_seg, sample):
        if with_gradient:
            warped, slope = plan.sample_with_gradient(moving_ind)
            score, d_score = soft_dice_grad(fixed_ind, warped)
            grad -= (d_score / sample.count)[..., None] * slope
        else:
            score = soft_dice(fixed_ind, plan.sample(moving_ind))
        scores.append(score)
    seg = -float(np.mean(scores))

    reg = reg_loss(ddf, w)
    if with_gradient:
        grad += reg_loss_grad(ddf, w)
    return LossBreakdown.from_terms(sim, seg, reg), grad


def total_loss(pair, ddf, w, sample):
    """L_sim + L_seg + L_reg as a LossBreakdown."""
    breakdown, _ = evaluate_objective(pair, ddf, w, sample, with_gradient=False)
    return breakdown


def total_loss_grad(pair, ddf, w, sample):
    """Gradient of ``total_loss`` with respect to the field, (H, W, D, 3)."""
    _, grad = evaluate_objective(pair, ddf, w, sample, with_gradient=True)
    return grad
