"""Run logs, metrics reports, comparison tables and figures."""

import json
import os

import matplotlib
matplotlib.use("Agg")
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from tabulate import tabulate

from ..core._5_metrics import paired_t_test, significance_marker, summarize
from ..core.exceptions import CtwarpError, WriteError

FORMAT_VERSION = 1


def _write_text(path, text):
    tmp = f"{path}.tmp"
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError as e:
        raise WriteError(f"Could not write {path}: {e}") from e
    return path


def _write_json(path, document):
    return _write_text(path, json.dumps(document, indent=2, sort_keys=False) + "\n")


# Run log

def run_log_records(result, timing=False):
    """One dict per optimizer step, ordered by (level, iteration)."""
    records = []
    for record in result.loss_trace:
        row = {"level": record.level, "iteration": record.iteration}
        row.update(record.breakdown.as_dict())
        row["grad_norm"] = record.grad_norm
        if timing:
            row["wall_ms"] = round(record.wall_ms, 3)
        records.append(row)
    return records


def write_run_log(result, path, timing=False):
    """Line-delimited JSON run log; the first line is a header record."""
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "run_log",
        "mode": result.mode,
        "levels": [
            {"factor": s.factor, "dims": list(s.dims), "iterations": s.iterations_run, "converged": s.converged}
            for s in result.levels
        ],
    }
    lines = [json.dumps(header)] + [json.dumps(r) for r in run_log_records(result, timing)]
    return _write_text(path, "\n".join(lines) + "\n")


def read_run_log(path):
    """Header and records of a run log written by ``write_run_log``."""
    with open(path, "r", encoding="utf-8") as f:
        rows = [json.loads(line) for line in f if line.strip()]
    if not rows:
        return {}, []
    return rows[0], rows[1:]


# Metrics report

def metrics_document(report, extra=None):
    document = {"format_version": FORMAT_VERSION, "kind": "metrics_report"}
    document.update(report.as_dict())
    if extra:
        document.update(extra)
    return document


def write_metrics_report(report, path, extra=None):
    return _write_json(path, metrics_document(report, extra))


def _tre_cell(value):
    return "-" if value is None else f"{value:.3f}"


def metrics_table(report):
    """Per-label Dice and TRE as a text table."""
    rows = [
        (label, f"{report.dice_per_label[label]:.4f}", _tre_cell(report.tre_per_label.get(label)))
        for label in report.labels_evaluated
    ]
    rows.append(("mean", f"{report.dice_mean:.4f}", f"{report.tre_mean:.3f}"))
    return tabulate(
        rows, headers=["Label", "Dice", "TRE (mm)"], tablefmt="simple", disable_numparse=True
    )


# Ablation

def _cell(values, digits):
    mean, std = summarize(values)
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def _p_value(x, y):
    try:
        return paired_t_test(x, y)[1]
    except CtwarpError:
        return None


def _format_p(p):
    return "n/a" if p is None else f"{p:.4f}"


def ablation_summary(records):
    """Group per-pair records by (mu_r, variant) and compare each variant with the baseline.

    ``records`` are dicts with keys subject, mu_r, variant, mi, dice, tre and
    bone_energy; the baseline variant is named ``"baseline"``.
    """
    groups = {}
    for r in records:
        groups.setdefault((r["mu_r"], r["variant"]), []).append(r)

    rows = []
    for mu_r in sorted({key[0] for key in groups}):
        base = sorted(groups.get((mu_r, "baseline"), []), key=lambda r: r["subject"])
        variants = sorted(v for m, v in groups if m == mu_r)
        variants = ["baseline"] + [v for v in variants if v != "baseline"]
        for variant in variants:
            group = sorted(groups.get((mu_r, variant), []), key=lambda r: r["subject"])
            if not group:
                continue
            row = {
                "mu_r": mu_r,
                "variant": variant,
                "n": len(group),
                **{f"{k}_values": [r[k] for r in group] for k in ("mi", "dice", "tre", "bone_energy")},
                "p_dice": None,
                "p_tre": None,
                "marker": "",
            }
            if variant != "baseline" and [r["subject"] for r in base] == [r["subject"] for r in group]:
                row["p_dice"] = _p_value([r["dice"] for r in group], [r["dice"] for r in base])
                row["p_tre"] = _p_value([r["tre"] for r in group], [r["tre"] for r in base])
                better = summarize(row["dice_values"])[0] > summarize([r["dice"] for r in base])[0]
                if better and row["p_dice"] is not None:
                    row["marker"] = significance_marker(row["p_dice"])
            rows.append(row)
    return rows


def ablation_table(rows):
    """Comparison table in the layout mean ± std per metric with paired p-values."""
    table = [
        (
            f"{row['mu_r']:g}", row["variant"], row["n"],
            _cell(row["mi_values"], 4), _cell(row["dice_values"], 4), _cell(row["tre_values"], 3),
            _cell(row["bone_energy_values"], 5),
            "" if row["variant"] == "baseline" else _format_p(row["p_dice"]),
            "" if row["variant"] == "baseline" else _format_p(row["p_tre"]),
            row["marker"],
        )
        for row in rows
    ]
    headers = ["mu_r", "Method", "n", "MI", "Dice", "TRE (mm)", "Bone energy", "p (Dice)", "p (TRE)", ""]
    return tabulate(table, headers=headers, tablefmt="grid", disable_numparse=True)


def write_ablation(records, out_dir):
    """Write ``ablation.txt`` and ``ablation.json``; returns the summary rows."""
    rows = ablation_summary(records)
    _write_text(os.path.join(out_dir, "ablation.txt"), ablation_table(rows) + "\n")
    _write_json(
        os.path.join(out_dir, "ablation.json"),
        {"format_version": FORMAT_VERSION, "kind": "ablation", "records": records, "summary": rows},
    )
    return rows


def plot_organ_dice(records, path, mu_r=None):
    """Box plot of per-organ Dice, baseline against each variant, with significance markers."""
    if not records:
        return None
    if mu_r is None:
        values = sorted({r["mu_r"] for r in records})
        mu_r = values[len(values) // 2]
    chosen = [r for r in records if r["mu_r"] == mu_r]
    variants = ["baseline"] + sorted({r["variant"] for r in chosen} - {"baseline"})
    labels = sorted({int(k) for r in chosen for k in r.get("dice_per_label", {})})
    if not labels:
        return None

    def per_label(variant, label):
        return [
            r["dice_per_label"][str(label)] for r in sorted(chosen, key=lambda r: r["subject"])
            if r["variant"] == variant and str(label) in r["dice_per_label"]
        ]

    fig = Figure(figsize=(max(6, 1.2 * len(labels)), 4), constrained_layout=True)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    width = 0.8 / len(variants)
    for k, variant in enumerate(variants):
        positions = [i + (k - (len(variants) - 1) / 2) * width for i in range(len(labels))]
        data = [per_label(variant, label) or [float("nan")] for label in labels]
        boxes = ax.boxplot(data, positions=positions, widths=width * 0.9, patch_artist=True)
        for patch in boxes["boxes"]:
            patch.set_facecolor(f"C{k}")
        ax.plot([], [], color=f"C{k}", linewidth=6, label=variant)

    for i, label in enumerate(labels):
        base = per_label("baseline", label)
        for variant in variants[1:]:
            other = per_label(variant, label)
            if len(base) == len(other) and len(base) > 1:
                p = _p_value(other, base)
                marker = significance_marker(p) if p is not None else ""
                if marker:
                    ax.annotate(marker, (i, 1.02), ha="center")

    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels([str(label) for label in labels])
    ax.set_xlabel("Label")
    ax.set_ylabel("Dice")
    ax.set_ylim(0.0, 1.08)
    ax.set_title(f"Organ-wise Dice at mu_r = {mu_r:g}")
    ax.legend(loc="lower right")
    try:
        fig.savefig(path, dpi=120)
    except OSError as e:
        raise WriteError(f"Could not write figure {path}: {e}") from e
    return path
