"""`weights` and `warp` subcommands."""

from ..core._1_volume_core import warp_labels_nearest, warp_scalar
from ..core._2_weight_map import (
    WeightMapParams, build_weight_map, weight_map_volume, weight_statistics
)
from ..core._4_engine import RegistrationConfig
from ..utils.config_utils import load_config
from ..utils.console_utils import info_message, section_header, success_message, summary_statistics
from ..utils.volume_io import (
    as_displacement_field, as_label_volume, as_scalar_volume, read_volume, write_volume
)


def run_weights(args, console):
    base = load_config(args.config).weight_params if args.config else RegistrationConfig().weight_params
    params = WeightMapParams(
        base.mu_r if args.mu_r is None else args.mu_r,
        base.delta if args.delta is None else args.delta,
        base.gamma if args.gamma is None else args.gamma,
    )
    ct = as_scalar_volume(read_volume(args.ct), args.ct)
    section_header(console, "Weight map")
    info_message(console, f"mu_r={params.mu_r:g}, delta={params.delta:g}, gamma={params.gamma:g}")

    w = build_weight_map(ct, params)
    write_volume(weight_map_volume(w), args.out)

    stats = {
        "Grid": "x".join(str(d) for d in w.dims),
        "Range": f"[{params.lower:g}, {params.upper:g}]",
        "Min weight": f"{w.weights.min():.2f}",
        "Mean weight": f"{w.weights.mean():.2f}",
        "Max weight": f"{w.weights.max():.2f}",
    }
    if args.seg:
        seg = as_label_volume(read_volume(args.seg), args.seg)
        for label, s in weight_statistics(w, seg).items():
            stats[f"Label {label} mean ({s['voxels']} voxels)"] = f"{s['mean']:.2f}"
    summary_statistics(console, stats, title="WEIGHT MAP")
    success_message(console, f"Weight map written to {args.out}")


def run_warp(args, console):
    source = read_volume(args.input)
    ddf = as_displacement_field(read_volume(args.ddf), args.ddf)
    section_header(console, f"Warping {args.input}")
    if args.mode == "nearest":
        warped = warp_labels_nearest(as_label_volume(source, args.input), ddf)
    else:
        warped = warp_scalar(as_scalar_volume(source, args.input), ddf)
    write_volume(warped, args.out)
    success_message(console, f"Warped volume written to {args.out}")


def add_parsers(subparsers):
    p = subparsers.add_parser("weights", help="Build the CT-guided weight map of a CT volume")
    p.add_argument("--ct", required=True, help="Moving CT volume (HU)")
    p.add_argument("--out", required=True, help="Output weight-map volume")
    p.add_argument("--config", help="Parameter file supplying mu_r, delta and gamma")
    p.add_argument("--mu-r", dest="mu_r", type=float, default=None, help="Mean regularization weight")
    p.add_argument("--delta", type=float, default=None, help="Half-width of the weight range")
    p.add_argument("--gamma", type=float, default=None, help="Exponent of the normalized CT")
    p.add_argument("--seg", help="Segmentation for the per-label weight summary")
    p.set_defaults(handler=run_weights, out_is_dir=False)

    p = subparsers.add_parser("warp", help="Resample a volume through a displacement field")
    p.add_argument("--input", required=True, help="Volume to warp")
    p.add_argument("--ddf", required=True, help="Displacement field on the output grid")
    p.add_argument("--out", required=True, help="Output volume")
    p.add_argument("--mode", choices=("linear", "nearest"), default="linear", help="Interpolation mode")
    p.set_defaults(handler=run_warp, out_is_dir=False)
