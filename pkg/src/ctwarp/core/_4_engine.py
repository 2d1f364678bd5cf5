"""Per-pair optimization of the registration objective.

The displacement field is optimized voxel by voxel with Adam over a coarse to
fine pyramid. Each level rebuilds its inputs and weight map from block-mean
downsampled volumes and starts from the upsampled field of the level above.
"""

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from ..utils.console_utils import (
    error_message, info_message, section_header, success_message, warning_message
)
from ..utils.progress_utils import NullProgress
from ._1_volume_core import (
    DisplacementField, LabelVolume, RegistrationPair, Volume, resize_trilinear
)
from ._2_weight_map import WeightMapParams, build_weight_map, uniform_weight_map
from ._3_losses import (
    evaluate_objective, label_sample_stream, label_universe, sample_labels
)
from .exceptions import CtwarpError, InvalidParams, NotEnoughLabels, ShapeMismatch


@dataclass(frozen=True)
class RegistrationConfig:
    """Hyperparameters of one registration run."""

    weight_params: WeightMapParams = field(default_factory=WeightMapParams)
    pyramid_factors: tuple = (4, 2, 1)
    iters_per_level: tuple = (150, 100, 80)
    step_size: float = 0.25
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    label_sample_count: int = 10
    seed: int = 0
    convergence_tol: float = 1e-6
    convergence_window: int = 10
    mi_bins: int = 32

    def __post_init__(self):
        factors = tuple(int(f) for f in self.pyramid_factors)
        iters = tuple(int(n) for n in self.iters_per_level)
        object.__setattr__(self, "pyramid_factors", factors)
        object.__setattr__(self, "iters_per_level", iters)
        errors = self.validation_errors()
        if errors:
            raise InvalidParams("; ".join(message for message, _ in errors), key=errors[0][1])

    def validation_errors(self):
        """List of (message, key) for every violated constraint."""
        factors = self.pyramid_factors
        checks = [
            (len(factors) > 0, "pyramid_factors must not be empty", "pyramid_factors"),
            (all(f >= 1 for f in factors), "pyramid factors must be positive", "pyramid_factors"),
            (all(a > b for a, b in zip(factors, factors[1:])),
             "pyramid factors must be strictly decreasing", "pyramid_factors"),
            (not factors or factors[-1] == 1, "the last pyramid factor must be 1", "pyramid_factors"),
            (len(self.iters_per_level) == len(factors),
             "iters_per_level must have one entry per pyramid level", "iters_per_level"),
            (all(n >= 1 for n in self.iters_per_level),
             "iterations per level must be positive", "iters_per_level"),
            (self.step_size > 0, "step_size must be > 0", "step_size"),
            (0 <= self.adam_beta1 < 1, "adam_beta1 must lie in [0, 1)", "adam_beta1"),
            (0 <= self.adam_beta2 < 1, "adam_beta2 must lie in [0, 1)", "adam_beta2"),
            (self.adam_eps > 0, "adam_eps must be > 0", "adam_eps"),
            (self.label_sample_count >= 1, "label_sample_count must be >= 1", "label_sample_count"),
            (self.seed >= 0, "seed must be >= 0", "seed"),
            (self.convergence_tol >= 0, "convergence_tol must be >= 0", "convergence_tol"),
            (self.convergence_window >= 1, "convergence_window must be >= 1", "convergence_window"),
            (self.mi_bins >= 2, "mi_bins must be >= 2", "mi_bins"),
        ]
        return [(message, key) for ok, message, key in checks if not ok]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def with_weights(self, **changes):
        return self.replace(weight_params=dataclasses.replace(self.weight_params, **changes))


@dataclass(frozen=True)
class IterationRecord:
    """One optimizer step: the loss at the field before the update."""

    level: int
    iteration: int
    breakdown: object
    grad_norm: float
    wall_ms: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class LevelSummary:
    factor: int
    dims: tuple
    iterations_run: int
    converged: bool


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    """Final full-resolution field, loss trace and per-level summary."""

    ddf: DisplacementField
    loss_trace: list
    levels: list
    weight_map: object
    mode: str = "proposed"

    @property
    def iterations_run(self):
        return [level.iterations_run for level in self.levels]

    @property
    def converged(self):
        return [level.converged for level in self.levels]

    def final_breakdown(self):
        return self.loss_trace[-1].breakdown


@dataclass
class AdamState:
    """First and second moment buffers of the field optimizer."""

    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))


def adam_step(state, grad, t, config):
    """Advance the Adam moments with ``grad`` and return the additive field update."""
    grad = np.asarray(grad, dtype=np.float64)
    if state.m.shape != grad.shape or state.v.shape != grad.shape:
        raise ShapeMismatch(f"optimizer state {state.m.shape} does not match gradient {grad.shape}")
    if t < 1:
        raise InvalidParams(f"Adam step index must be >= 1, got {t}")
    b1, b2 = config.adam_beta1, config.adam_beta2

    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * (grad * grad)

    m_hat = state.m / (1.0 - b1 ** t)
    v_hat = state.v / (1.0 - b2 ** t)
    return -config.step_size * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def _check_factor(dims, factor):
    factor = int(factor)
    if factor < 1:
        raise InvalidParams(f"downsampling factor must be >= 1, got {factor}")
    if factor > max(dims):
        raise InvalidParams(f"downsampling factor {factor} exceeds every grid dimension {dims}")
    return factor


def _block_sums(arr, factor):
    for axis in range(3):
        starts = np.arange(0, arr.shape[axis], factor)
        arr = np.add.reduceat(arr, starts, axis=axis)
    return arr


def _block_counts(dims, factor):
    sizes = [np.diff(np.append(np.arange(0, n, factor), n)) for n in dims]
    return sizes[0][:, None, None] * sizes[1][None, :, None] * sizes[2][None, None, :]


def _pooled_grid(grid, factor):
    dims = tuple(-(-n // factor) for n in grid.dims)
    spacing = tuple(s * factor for s in grid.spacing)
    origin = tuple(o + 0.5 * (factor - 1) * s for o, s in zip(grid.origin, grid.spacing))
    return grid.replace(dims=dims, spacing=spacing, origin=origin)


def downsample_volume(vol, factor):
    """Block-mean pooling over factor^3 blocks; partial blocks average what they hold."""
    factor = _check_factor(vol.dims, factor)
    if factor == 1:
        return Volume(vol.grid, vol.values)
    sums = _block_sums(vol.values, factor)
    return Volume(_pooled_grid(vol.grid, factor), sums / _block_counts(vol.dims, factor))


def downsample_labels(seg, factor):
    """Majority-vote pooling over factor^3 blocks, ties to the smaller label."""
    factor = _check_factor(seg.dims, factor)
    if factor == 1:
        return LabelVolume(seg.grid, seg.labels, seg.num_classes)
    ids = np.unique(seg.labels)
    votes = np.stack([_block_sums((seg.labels == i).astype(np.int64), factor) for i in ids])
    # argmax keeps the first maximum, ids are ascending
    labels = ids[np.argmax(votes, axis=0)]
    return LabelVolume(_pooled_grid(seg.grid, factor), labels, seg.num_classes)


def downsample_pair(pair, factor):
    """Downsample all six volumes of a pair by the same factor."""
    if factor == 1:
        return pair
    return RegistrationPair(
        downsample_volume(pair.moving_pet, factor), downsample_volume(pair.fixed_pet, factor),
        downsample_volume(pair.moving_ct, factor), downsample_volume(pair.fixed_ct, factor),
        downsample_labels(pair.moving_seg, factor), downsample_labels(pair.fixed_seg, factor),
        pair.subject, pair.tracer_moving, pair.tracer_fixed,
    )


def upsample_ddf(ddf, target_grid, factor):
    """Resize each component to ``target_grid`` and rescale to finer voxel units.

    ``factor`` is the ratio of the coarse to the fine pooling factor and need
    not be an integer, e.g. 1.5 between levels 3 and 2.
    """
    factor = float(factor)
    if not factor >= 1.0:
        raise InvalidParams(f"upsampling factor must be >= 1, got {factor}")
    for n_src, n_dst in zip(ddf.dims, target_grid.dims):
        # ceil pooling leaves less than one coarse voxel of slack per axis
        if abs(n_dst - n_src * factor) > max(1.0, factor):
            raise ShapeMismatch(
                f"cannot upsample field of dims {ddf.dims} by {factor:g} onto {target_grid.dims}"
            )
    components = [
        resize_trilinear(Volume(ddf.grid, ddf.vectors[..., k]), target_grid.dims).values
        for k in range(3)
    ]
    return DisplacementField(target_grid, np.stack(components, axis=-1) * factor)


def smoothed_totals(trace, window):
    """Trailing moving average of the total loss over ``window`` records."""
    totals = np.array([r.breakdown.total for r in trace])
    if totals.size < window:
        return totals.copy()
    kernel = np.ones(window) / window
    return np.convolve(totals, kernel, mode="valid")


def _has_converged(totals, window, tol):
    if len(totals) < 2 * window:
        return False
    recent = float(np.mean(totals[-window:]))
    previous = float(np.mean(totals[-2 * window:-window]))
    change = abs(previous - recent) / max(abs(previous), 1e-12)
    return recent <= previous and change < tol


class RegistrationEngine:
    """Coarse-to-fine Adam optimization of the CT-guided registration objective."""

    def __init__(self, progress_bar=None, console=None, work_dir=None):
        self.progress = progress_bar if progress_bar is not None else NullProgress()
        self.console = console
        self.work_dir = work_dir

    def register(self, pair, config, uniform=False):
        """Estimate the moving <- fixed field of ``pair``.

        With ``uniform`` the regularization weight is the constant ``mu_r``
        (global baseline); otherwise it is the CT-guided weight map.
        """
        mode = "baseline" if uniform else "proposed"
        section_header(self.console, f"{mode} registration {pair.subject}".strip())
        params = config.weight_params
        info_message(
            self.console,
            f"mu_r={params.mu_r:g}" + ("" if uniform else f", delta={params.delta:g}, gamma={params.gamma:g}")
            + f", pyramid={list(config.pyramid_factors)}, iterations={list(config.iters_per_level)}",
        )

        trace = []
        levels = []
        ddf = None
        weights = None
        prev_factor = None
        n_levels = len(config.pyramid_factors)

        for level, (factor, iters) in enumerate(zip(config.pyramid_factors, config.iters_per_level)):
            iteration = None
            try:
                level_pair = downsample_pair(pair, factor)
                grid = level_pair.fixed_grid
                if uniform:
                    weights = uniform_weight_map(grid, params.mu_r)
                else:
                    weights = build_weight_map(level_pair.moving_ct, params)
                if ddf is None:
                    vectors = np.zeros(grid.dims + (3,))
                else:
                    vectors = np.array(upsample_ddf(ddf, grid, prev_factor / factor).vectors)

                universe = label_universe(level_pair.fixed_seg, level_pair.moving_seg)
                if not universe:
                    raise NotEnoughLabels("no foreground labels in either segmentation")
                count = min(config.label_sample_count, len(universe))
                if count < config.label_sample_count:
                    warning_message(
                        self.console,
                        f"level {level}: only {len(universe)} labels present, sampling all of them",
                    )

                info_message(
                    self.console,
                    f"Level {level + 1}/{n_levels}: factor {factor}, grid {grid.dims}, up to {iters} iterations",
                )
                self.progress.start(f"Level {level + 1}/{n_levels}", iters)

                state = AdamState.zeros(vectors.shape)
                totals = []
                converged = False
                for iteration in range(iters):
                    started = time.perf_counter()
                    sample = sample_labels(
                        universe, count, label_sample_stream(config.seed, level, iteration)
                    )
                    current = DisplacementField(grid, vectors)
                    breakdown, grad = evaluate_objective(level_pair, current, weights, sample)
                    vectors = vectors + adam_step(state, grad, iteration + 1, config)
                    trace.append(IterationRecord(
                        level, iteration, breakdown, float(np.linalg.norm(grad)),
                        (time.perf_counter() - started) * 1000.0,
                    ))
                    totals.append(breakdown.total)
                    self.progress.update(iteration + 1, f"total={breakdown.total:.6f}")
                    if _has_converged(totals, config.convergence_window, config.convergence_tol):
                        converged = True
                        break
                self.progress.finish()

                ddf = DisplacementField(grid, vectors)
                prev_factor = factor
                levels.append(LevelSummary(factor, grid.dims, len(totals), converged))
                last = trace[-1].breakdown
                success_message(
                    self.console,
                    f"Level {level + 1} done after {len(totals)} iterations"
                    f"{' (converged)' if converged else ''}: sim={last.sim:.4f} seg={last.seg:.4f} "
                    f"reg={last.reg:.4g} total={last.total:.4f}",
                )
            except CtwarpError as e:
                self.progress.finish()
                where = f"level {level} (factor {factor})"
                if iteration is not None:
                    where += f", iteration {iteration}"
                error_message(self.console, f"Registration failed at {where}: {e}")
                wrapped = type(e)(f"{where}: {e}")
                wrapped.__dict__.update(e.__dict__)
                raise wrapped from e

        return RegistrationResult(ddf, trace, levels, weights, mode)

    def baseline_register(self, pair, config):
        """Same pipeline with the uniform weight ``mu_r`` everywhere."""
        return self.register(pair, config, uniform=True)


def register(pair, config, progress_bar=None, console=None):
    """Register ``pair`` with the CT-guided weight map."""
    return RegistrationEngine(progress_bar, console).register(pair, config)


def baseline_register(pair, config, progress_bar=None, console=None):
    """Register ``pair`` with the global weight ``mu_r``."""
    return RegistrationEngine(progress_bar, console).baseline_register(pair, config)
