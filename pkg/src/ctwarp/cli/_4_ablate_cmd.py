"""`ablate` subcommand: baseline against CT-guided weights over a set of bundles."""

import os

from ..core._1_volume_core import normalize_pair
from ..core._4_engine import RegistrationConfig, RegistrationEngine
from ..core._5_metrics import evaluate, gradient_energy
from ..utils.config_utils import load_config
from ..utils.console_utils import info_message, progress_message, section_header, success_message
from ..utils.report_utils import ablation_table, plot_organ_dice, write_ablation
from ..utils.volume_io import read_phantom_bundle
from . import UsageError

DEFAULT_MU_R = (4000.0, 4500.0, 5000.0, 5500.0, 6000.0, 6500.0, 7000.0)


def parse_floats(text, option):
    try:
        values = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError as e:
        raise UsageError(f"invalid {option} {text!r}: {e}") from e
    if not values:
        raise UsageError(f"{option} needs at least one value")
    return values


def variant_name(gamma):
    return f"gamma={gamma:g}"


class AblationRunner:
    """Registers every pair with the baseline and each CT-guided variant."""

    def __init__(self, progress_bar, console, work_dir):
        self.progress_bar = progress_bar
        self.console = console
        self.work_dir = work_dir

    def _record(self, phantom, pair, mu_r, variant, result, bins):
        report = evaluate(pair, result.ddf, bins=bins)
        bone = phantom.bone_mask
        return {
            "subject": phantom.pair.subject,
            "mu_r": mu_r,
            "variant": variant,
            "mi": report.mi,
            "dice": report.dice_mean,
            "tre": report.tre_mean,
            "bone_energy": gradient_energy(result.ddf, bone) if bone.any() else float("nan"),
            "dice_per_label": {str(k): v for k, v in report.dice_per_label.items()},
            "tre_per_label": {str(k): v for k, v in report.tre_per_label.items()},
        }

    def run(self, bundles, config, mu_values, delta, gammas):
        engine = RegistrationEngine(self.progress_bar, None, self.work_dir)
        phantoms = [read_phantom_bundle(path) for path in bundles]
        total = len(phantoms) * len(mu_values) * (1 + len(gammas))
        records = []
        step = 0

        section_header(self.console, "Ablation")
        info_message(
            self.console,
            f"{len(phantoms)} pairs, mu_r in {list(mu_values)}, delta={delta:g}, gamma in {list(gammas)}",
        )
        for mu_r in mu_values:
            for phantom in phantoms:
                pair = normalize_pair(phantom.pair)
                runs = [("baseline", config.with_weights(mu_r=mu_r, delta=0.0), True)]
                runs += [
                    (variant_name(g), config.with_weights(mu_r=mu_r, delta=delta, gamma=g), False)
                    for g in gammas
                ]
                for variant, run_config, uniform in runs:
                    step += 1
                    progress_message(self.console, step, total, f"{pair.subject}: mu_r={mu_r:g} {variant}")
                    result = engine.register(pair, run_config, uniform=uniform)
                    records.append(self._record(phantom, pair, mu_r, variant, result, config.mi_bins))
        return records


def run_ablate(args, console):
    mu_values = parse_floats(args.mu_r, "--mu-r")
    gammas = parse_floats(args.gamma, "--gamma")
    config = load_config(args.config) if args.config else RegistrationConfig()
    for path in args.bundles:
        if not os.path.isdir(path):
            raise FileNotFoundError(2, "Bundle directory not found", path)

    runner = AblationRunner(None, console, args.out)
    records = runner.run(args.bundles, config, mu_values, args.delta, gammas)
    rows = write_ablation(records, args.out)
    info_message(console, ablation_table(rows))
    if args.plot:
        path = plot_organ_dice(records, os.path.join(args.out, "ablation_organs.png"))
        if path:
            info_message(console, f"Organ-wise figure written to {path}")
    success_message(console, f"Ablation written to {args.out}")


def add_parsers(subparsers):
    p = subparsers.add_parser("ablate", help="Compare baseline and CT-guided regularization on phantom bundles")
    p.add_argument("bundles", nargs="+", help="Phantom bundle directories")
    p.add_argument("--mu-r", dest="mu_r", default=",".join(f"{m:g}" for m in DEFAULT_MU_R),
                   help="Comma-separated mu_r values")
    p.add_argument("--delta", type=float, default=3000.0, help="delta of the CT-guided variants")
    p.add_argument("--gamma", default="2", help="Comma-separated gamma values of the CT-guided variants")
    p.add_argument("--config", help="Parameter file for the optimizer settings")
    p.add_argument("--out", default="ablation", help="Output directory")
    p.add_argument("--plot", action="store_true", help="Write the organ-wise Dice figure")
    p.set_defaults(handler=run_ablate, out_is_dir=True)
