"""`register`, `baseline-register` and `eval` subcommands."""

import os

import numpy as np

from ..core._1_volume_core import normalize_pair, warp_labels_nearest, warp_scalar
from ..core._2_weight_map import weight_map_volume
from ..core._4_engine import RegistrationConfig, RegistrationEngine
from ..core._5_metrics import evaluate, gradient_energy, jacobian_determinant
from ..core._6_phantom import BONE_LABEL, endpoint_error
from ..utils.config_utils import load_config, save_config
from ..utils.console_utils import info_message, section_header, success_message, summary_statistics
from ..utils.progress_utils import ConsoleProgress
from ..utils.report_utils import metrics_table, write_metrics_report, write_run_log
from ..utils.volume_io import (
    as_displacement_field, read_pair, read_phantom_bundle, read_volume, write_volume
)
from . import UsageError

PAIR_ROLES = ("moving_pet", "fixed_pet", "moving_ct", "fixed_ct", "moving_seg", "fixed_seg")


def add_pair_arguments(parser):
    parser.add_argument("--bundle", help="Phantom bundle directory holding all six volumes")
    for role in PAIR_ROLES:
        parser.add_argument(f"--{role.replace('_', '-')}", dest=role, help=f"{role.replace('_', ' ')} volume")


def load_pair(args):
    """(pair, phantom) from ``--bundle`` or six explicit paths; phantom is None for the latter."""
    given = [role for role in PAIR_ROLES if getattr(args, role)]
    if args.bundle:
        if given:
            raise UsageError("--bundle cannot be combined with explicit volume paths")
        phantom = read_phantom_bundle(args.bundle)
        return phantom.pair, phantom
    missing = [role for role in PAIR_ROLES if role not in given]
    if missing:
        raise UsageError("missing inputs: " + ", ".join("--" + r.replace("_", "-") for r in missing))
    paths = [getattr(args, role) for role in PAIR_ROLES]
    subject = os.path.basename(os.path.dirname(os.path.abspath(paths[0])))
    return read_pair(*paths, subject=subject), None


def output_path(out_dir, name, fmt):
    return os.path.join(out_dir, name + (".nii" if fmt == "nifti" else ".raw"))


class RegistrationRunner:
    """Runs one registration and writes its field, warped volumes, log and metrics."""

    def __init__(self, progress_bar, console, work_dir):
        self.progress_bar = progress_bar
        self.console = console
        self.work_dir = work_dir

    def run(self, pair, config, uniform=False, phantom=None, fmt="nifti", timing=False):
        os.makedirs(self.work_dir, exist_ok=True)
        engine = RegistrationEngine(self.progress_bar, self.console, self.work_dir)
        normalized = normalize_pair(pair)
        if uniform:
            result = engine.baseline_register(normalized, config)
        else:
            result = engine.register(normalized, config)
        ddf = result.ddf

        section_header(self.console, "Writing results")
        write_volume(ddf, output_path(self.work_dir, "ddf", fmt), fmt)
        write_volume(warp_scalar(pair.moving_pet, ddf), output_path(self.work_dir, "warped_pet", fmt), fmt)
        write_volume(warp_scalar(pair.moving_ct, ddf), output_path(self.work_dir, "warped_ct", fmt), fmt)
        write_volume(warp_labels_nearest(pair.moving_seg, ddf), output_path(self.work_dir, "warped_seg", fmt), fmt)
        write_volume(weight_map_volume(result.weight_map), output_path(self.work_dir, "weights", fmt), fmt)
        write_run_log(result, os.path.join(self.work_dir, "run_log.jsonl"), timing=timing)
        save_config(config, os.path.join(self.work_dir, "config.par"))

        report = evaluate(normalized, ddf, bins=config.mi_bins)
        extra = {"mode": result.mode, "subject": pair.subject, **field_statistics(ddf, pair)}
        if phantom is not None:
            extra["endpoint_error"] = endpoint_error(ddf, phantom.gt_ddf, phantom.body_mask).as_dict()
        write_metrics_report(report, os.path.join(self.work_dir, "metrics.json"), extra)

        info_message(self.console, metrics_table(report))
        stats = {
            "Mode": result.mode,
            "Iterations per level": ", ".join(str(n) for n in result.iterations_run),
            "Final total loss": f"{result.final_breakdown().total:.6f}",
            "MI": f"{report.mi:.4f}",
            "Dice (mean)": f"{report.dice_mean:.4f}",
            "TRE (mean, mm)": f"{report.tre_mean:.3f}",
            "Min Jacobian": f"{extra['min_jacobian']:.4f}",
        }
        if phantom is not None:
            stats["Endpoint error (voxels)"] = f"{extra['endpoint_error']['mean_voxels']:.4f}"
        summary_statistics(self.console, stats, title="REGISTRATION SUMMARY")
        success_message(self.console, f"Results written to {self.work_dir}")
        return result, report


def field_statistics(ddf, pair):
    """Folding and rigidity statistics of a field."""
    jac = jacobian_determinant(ddf)
    stats = {
        "min_jacobian": float(jac.min()),
        "folded_voxels": int(np.sum(jac <= 0)),
        "mean_displacement": float(np.linalg.norm(ddf.vectors, axis=-1).mean()),
    }
    bone = pair.fixed_seg.labels == BONE_LABEL
    if bone.any():
        stats["bone_energy"] = gradient_energy(ddf, bone)
    return stats


def _config(args):
    return load_config(args.config) if args.config else RegistrationConfig()


def run_register(args, console):
    pair, phantom = load_pair(args)
    config = _config(args)
    progress = ConsoleProgress() if console is not None else None
    runner = RegistrationRunner(progress, console, args.out)
    runner.run(pair, config, uniform=args.uniform, phantom=phantom, fmt=args.format, timing=args.timing)


def run_eval(args, console):
    pair, phantom = load_pair(args)
    ddf = as_displacement_field(read_volume(args.ddf), args.ddf)
    section_header(console, f"Evaluating {args.ddf}")
    normalized = normalize_pair(pair)
    report = evaluate(normalized, ddf, bins=args.bins)
    extra = {"subject": pair.subject, "ddf": os.path.abspath(args.ddf), **field_statistics(ddf, pair)}
    if phantom is not None:
        extra["endpoint_error"] = endpoint_error(ddf, phantom.gt_ddf, phantom.body_mask).as_dict()
    path = write_metrics_report(report, args.out, extra)
    info_message(console, metrics_table(report))
    for label, reason in sorted(report.excluded_labels.items()):
        info_message(console, f"Label {label} excluded: {reason}")
    success_message(console, f"Metrics report written to {path}")


def add_parsers(subparsers):
    for name, uniform, text in (
        ("register", False, "Register a pair with the CT-guided weight map"),
        ("baseline-register", True, "Register a pair with the global weight mu_r"),
    ):
        p = subparsers.add_parser(name, help=text, description=text)
        add_pair_arguments(p)
        p.add_argument("--config", help="Parameter file (.par)")
        p.add_argument("--out", default="ctwarp_output", help="Output directory")
        p.add_argument("--format", choices=("nifti", "raw"), default="nifti", help="Output volume format")
        p.add_argument("--timing", action="store_true", help="Record wall-clock time per iteration in the run log")
        p.set_defaults(handler=run_register, uniform=uniform, out_is_dir=True)

    p = subparsers.add_parser("eval", help="Score a displacement field on a pair")
    add_pair_arguments(p)
    p.add_argument("--ddf", required=True, help="Displacement field file")
    p.add_argument("--out", default="metrics.json", help="Metrics report path")
    p.add_argument("--bins", type=int, default=32, help="Histogram bins for mutual information")
    p.set_defaults(handler=run_eval, out_is_dir=False)
