"""Core registration components for ctwarp."""

from ._1_volume_core import (
    DisplacementField, Grid, LabelVolume, RegistrationPair, Volume,
    normalize_pair, warp_labels_nearest, warp_scalar,
)
from ._2_weight_map import WeightMap, WeightMapParams, build_weight_map, uniform_weight_map
from ._3_losses import LossBreakdown, total_loss, total_loss_grad
from ._4_engine import RegistrationConfig, RegistrationEngine, RegistrationResult, baseline_register, register
from ._5_metrics import MetricsReport, evaluate, paired_t_test
from ._6_phantom import PhantomPair, PhantomSpec, endpoint_error, generate_phantom
