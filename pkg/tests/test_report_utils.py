import json

import pytest

from ctwarp.core._1_volume_core import DisplacementField, identical_pair
from ctwarp.core._4_engine import register
from ctwarp.core._5_metrics import MetricsReport, evaluate, paired_t_test, significance_marker
from ctwarp.utils.report_utils import (
    ablation_summary, ablation_table, metrics_table, plot_organ_dice, read_run_log, write_ablation,
    write_metrics_report, write_run_log,
)


def records():
    rows = []
    for subject, base, guided in (("a", 0.80, 0.85), ("b", 0.81, 0.87), ("c", 0.79, 0.86)):
        for variant, dice in (("baseline", base), ("gamma=2", guided)):
            rows.append({
                "subject": subject, "mu_r": 4500.0, "variant": variant,
                "mi": 0.5, "dice": dice, "tre": 2.0 - dice, "bone_energy": 0.01,
                "dice_per_label": {"1": dice, "2": dice - 0.1},
                "tre_per_label": {"1": 1.0, "2": 2.0},
            })
    return rows


def test_ablation_summary():
    rows = ablation_summary(records())
    assert [row["variant"] for row in rows] == ["baseline", "gamma=2"]
    base, guided = rows
    assert base["p_dice"] is None and base["marker"] == ""
    assert guided["n"] == 3
    assert guided["dice_values"] == [0.85, 0.87, 0.86]
    _, p = paired_t_test([0.85, 0.87, 0.86], [0.80, 0.81, 0.79])
    assert guided["p_dice"] == pytest.approx(p)
    assert guided["marker"] == significance_marker(p)

    table = ablation_table(rows)
    assert "gamma=2" in table and "±" in table


def test_write_ablation_and_plot(tmp_path):
    rows = write_ablation(records(), str(tmp_path))
    document = json.loads((tmp_path / "ablation.json").read_text(encoding="utf-8"))
    assert document["kind"] == "ablation"
    assert len(document["records"]) == 6
    assert len(document["summary"]) == len(rows) == 2
    assert (tmp_path / "ablation.txt").read_text(encoding="utf-8").strip()

    path = plot_organ_dice(records(), str(tmp_path / "organs.png"))
    assert path and (tmp_path / "organs.png").stat().st_size > 0
    assert plot_organ_dice([], str(tmp_path / "none.png")) is None


def test_run_log_and_metrics_report(tmp_path, block_pair, tiny_config):
    pair = identical_pair(block_pair())
    result = register(pair, tiny_config.replace(iters_per_level=(2, 2)))

    path = write_run_log(result, str(tmp_path / "run_log.jsonl"))
    header, rows = read_run_log(path)
    assert header["kind"] == "run_log"
    assert [level["factor"] for level in header["levels"]] == [2, 1]
    assert len(rows) == 4
    assert set(rows[0]) == {"level", "iteration", "sim", "seg", "reg", "total", "grad_norm"}

    report = evaluate(pair, DisplacementField.zeros(pair.fixed_grid))
    path = write_metrics_report(report, str(tmp_path / "metrics.json"), {"mode": "proposed"})
    document = json.loads(open(path, encoding="utf-8").read())
    assert document["kind"] == "metrics_report"
    assert document["dice_mean"] == 1.0 and document["mode"] == "proposed"
    assert "mean" in metrics_table(report)


def test_read_run_log_of_an_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    assert read_run_log(str(path)) == ({}, [])


def test_plot_organ_dice_without_records(tmp_path):
    assert plot_organ_dice([], str(tmp_path / "none.png")) is None
    assert plot_organ_dice(records(), str(tmp_path / "other.png"), mu_r=9000.0) is None
    assert not (tmp_path / "none.png").exists()


def test_metrics_table_marks_labels_without_tre():
    report = MetricsReport(
        mi=0.1, dice_per_label={1: 1.0, 2: 0.0}, dice_mean=0.5,
        tre_per_label={1: 0.0}, tre_mean=0.0, labels_evaluated=[1, 2],
        excluded_labels={2: "label 2 is empty in the warped segmentation"},
    )
    rows = metrics_table(report).splitlines()
    assert rows[-2].split() == ["2", "0.0000", "-"]
    assert rows[-1].split() == ["mean", "0.5000", "0.000"]
