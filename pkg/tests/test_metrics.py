import math

import numpy as np
import pytest
from scipy import stats

from ctwarp.core._1_volume_core import (
    DisplacementField, Grid, LabelVolume, RegistrationPair, Volume, identical_pair
)
from ctwarp.core._5_metrics import (
    evaluate, gradient_energy, hard_dice, jacobian_determinant, mutual_information,
    paired_t_test, significance_marker, summarize, tre,
)
from ctwarp.core.exceptions import (
    DegenerateSample, EmptyLabel, EmptyMask, InvalidParams, OutOfRange, ShapeMismatch
)


def segs(shape, *masks):
    """LabelVolumes with label 1 on each boolean mask."""
    grid = Grid(shape)
    return [LabelVolume(grid, m.astype(int)) for m in masks]


# Mutual information

def test_mi_of_constant_is_zero(rng):
    a = rng.uniform(0.0, 1.0, size=1000)
    assert mutual_information(a, np.full(1000, 0.3)) == 0.0


def test_mi_of_identical_uniform_bins():
    a = np.repeat([0.1, 0.3, 0.6, 0.9], 25)
    assert mutual_information(a, a) == pytest.approx(math.log(4), abs=1e-12)
    # value 1 falls into the last bin
    assert mutual_information([0.0, 1.0], [0.0, 1.0]) == pytest.approx(math.log(2), abs=1e-12)


def test_mi_of_independent_samples_is_small(rng):
    a = rng.uniform(0.0, 1.0, size=100_000)
    b = rng.uniform(0.0, 1.0, size=100_000)
    assert mutual_information(a, b, bins=32) <= 0.05


def test_mi_symmetry_and_sign(rng):
    for _ in range(10):
        a = rng.uniform(0.0, 1.0, size=500)
        b = np.clip(a + rng.normal(0.0, 0.2, size=500), 0.0, 1.0)
        assert mutual_information(a, b) == mutual_information(b, a)
        assert mutual_information(a, b) >= -1e-12


def test_mi_errors():
    with pytest.raises(ShapeMismatch):
        mutual_information(np.zeros(3), np.zeros(4))
    with pytest.raises(OutOfRange):
        mutual_information([0.0, 1.5], [0.0, 1.0])
    with pytest.raises(InvalidParams):
        mutual_information([0.0, 1.0], [0.0, 1.0], bins=1)


# Hard Dice and TRE

def test_hard_dice_examples():
    shape = (4, 4, 1)
    a = np.zeros(shape, dtype=bool)
    a[0, :, 0] = True
    b = np.zeros(shape, dtype=bool)
    b[3, :, 0] = True
    c = np.zeros(shape, dtype=bool)
    c[0, :2, 0] = True
    c[1, :2, 0] = True
    sa, sb, sc, empty = segs(shape, a, b, c, np.zeros(shape, dtype=bool))

    assert hard_dice(sa, sa, 1) == 1.0
    assert hard_dice(sa, sb, 1) == 0.0
    assert hard_dice(sa, sc, 1) == 0.5
    assert hard_dice(empty, empty, 1) == 1.0
    assert hard_dice(sa, empty, 1) == 0.0
    assert hard_dice(sc, sa, 1) == hard_dice(sa, sc, 1)


def test_hard_dice_ignores_other_labels():
    grid = Grid((4, 1, 1))
    fixed = LabelVolume(grid, [1, 1, 2, 0])
    warped = LabelVolume(grid, [1, 1, 3, 3])
    assert hard_dice(fixed, warped, 1) == 1.0


def test_tre_examples():
    shape = (8, 8, 2)
    a = np.zeros(shape, dtype=bool)
    a[1:3, 1:3, :] = True
    b = np.zeros(shape, dtype=bool)
    b[4:6, 5:7, :] = True
    sa, sb = segs(shape, a, b)
    assert tre(sa, sa, 1, (1.0, 1.0, 1.0)) == 0.0
    assert tre(sa, sb, 1, (1.0, 1.0, 1.0)) == pytest.approx(5.0)
    assert tre(sa, sb, 1, (2.0, 2.0, 2.0)) == pytest.approx(10.0)


def test_tre_translation_covariance(rng):
    shape = (10, 10, 10)
    a = rng.uniform(size=shape) > 0.7
    b = rng.uniform(size=shape) > 0.7
    a[7:], b[7:] = False, False
    sa, sb = segs(shape, a, b)
    ta, tb = segs(shape, np.roll(a, 3, axis=0), np.roll(b, 3, axis=0))
    spacing = (1.5, 2.0, 0.5)
    assert tre(ta, tb, 1, spacing) == pytest.approx(tre(sa, sb, 1, spacing), rel=1e-9, abs=1e-12)


def test_tre_of_empty_label():
    shape = (3, 3, 3)
    a = np.zeros(shape, dtype=bool)
    a[1, 1, 1] = True
    sa, empty = segs(shape, a, np.zeros(shape, dtype=bool))
    with pytest.raises(EmptyLabel) as err:
        tre(sa, empty, 1, (1.0, 1.0, 1.0))
    assert err.value.label == 1


# evaluate

def test_evaluate_identical_pair(block_pair):
    pair = identical_pair(block_pair())
    report = evaluate(pair, DisplacementField.zeros(pair.fixed_grid))
    assert report.labels_evaluated == [1, 2, 5]
    assert report.dice_mean == 1.0
    assert report.tre_mean == 0.0
    assert report.excluded_labels == {}
    assert report.mi > 0.0


def test_evaluate_reports_the_known_shift(block_pair):
    spacing = (2.0, 2.0, 2.0)
    pair = block_pair(shift=(1, 0, 0), spacing=spacing)
    report = evaluate(pair, DisplacementField.zeros(pair.fixed_grid))
    assert abs(report.tre_mean - 2.0) <= 0.5 * max(spacing)
    assert report.dice_mean < 1.0

    aligned = evaluate(pair, DisplacementField.constant(pair.fixed_grid, (1.0, 0.0, 0.0)))
    assert aligned.dice_mean == 1.0
    assert aligned.tre_mean == pytest.approx(0.0, abs=1e-12)


def test_evaluate_means_match_per_label_values(block_pair):
    pair = block_pair(shift=(1, 1, 0))
    report = evaluate(pair, DisplacementField.zeros(pair.fixed_grid))
    labels = report.labels_evaluated
    assert report.dice_mean == pytest.approx(np.mean([report.dice_per_label[k] for k in labels]))
    assert report.tre_mean == pytest.approx(np.mean([report.tre_per_label[k] for k in labels]))
    document = report.as_dict()
    assert [row["label"] for row in document["per_label"]] == labels


def test_evaluate_excludes_missing_labels(block_pair):
    pair = block_pair()
    labels = np.array(pair.moving_seg.labels)
    labels[labels == 5] = 1
    moving = pair.moving_seg.with_labels(labels)
    broken = type(pair)(
        pair.moving_pet, pair.fixed_pet, pair.moving_ct, pair.fixed_ct, moving, pair.fixed_seg
    )
    report = evaluate(broken, DisplacementField.zeros(broken.fixed_grid))
    assert 5 in report.excluded_labels
    assert report.labels_evaluated == [1, 2, 5]
    assert report.dice_per_label[5] == 0.0
    assert 5 not in report.tre_per_label
    assert report.dice_per_label[2] == 1.0
    assert report.dice_mean == pytest.approx(np.mean([report.dice_per_label[k] for k in (1, 2, 5)]))
    assert report.tre_mean == pytest.approx(np.mean([report.tre_per_label[k] for k in (1, 2)]))
    assert report.as_dict()["per_label"][2] == {"label": 5, "dice": 0.0, "tre_mm": None}


def test_erasing_an_organ_lowers_the_dice_mean():
    grid = Grid((8, 8, 8))
    fixed = np.zeros(grid.dims, dtype=np.int32)
    fixed[1:7, 1:7, 1:4] = 1
    fixed[2:5, 2:5, 5:7] = 2
    moving = np.where(fixed == 2, 0, fixed)
    ct = np.where(fixed > 0, 0.5, 0.0)
    pair = RegistrationPair(
        Volume(grid, ct), Volume(grid, ct), Volume(grid, ct), Volume(grid, ct),
        LabelVolume(grid, moving), LabelVolume(grid, fixed),
    )
    report = evaluate(pair, DisplacementField.zeros(grid))
    assert report.dice_per_label == {1: 1.0, 2: 0.0}
    assert report.dice_mean == 0.5
    assert list(report.excluded_labels) == [2]
    assert report.tre_per_label == {1: 0.0}
    assert report.tre_mean == 0.0


# Paired t-test

def test_t_test_examples():
    with pytest.raises(DegenerateSample):
        paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])

    t, p = paired_t_test([1.0, -1.0], [0.0, 0.0])
    assert t == 0.0
    assert p == pytest.approx(1.0, abs=1e-12)

    t, p = paired_t_test([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    assert t == pytest.approx(2.0 * math.sqrt(3.0), rel=1e-12)
    assert p == pytest.approx(2.0 * stats.t.sf(t, df=2), abs=1e-8)
    assert p == pytest.approx(0.0742, abs=5e-5)


def test_t_test_against_scipy(rng):
    for n in (4, 10, 30):
        x = rng.normal(size=n)
        y = x + rng.normal(0.3, 1.0, size=n)
        t, p = paired_t_test(x, y)
        reference = stats.ttest_rel(x, y)
        assert t == pytest.approx(reference.statistic, rel=1e-10)
        assert p == pytest.approx(reference.pvalue, abs=1e-8)


def test_t_test_antisymmetry(rng):
    x = rng.normal(size=8)
    y = rng.normal(size=8)
    t_xy, p_xy = paired_t_test(x, y)
    t_yx, p_yx = paired_t_test(y, x)
    assert t_yx == pytest.approx(-t_xy, rel=1e-12)
    assert p_yx == pytest.approx(p_xy, rel=1e-12)


def test_t_test_input_checks():
    with pytest.raises(ShapeMismatch):
        paired_t_test([1.0, 2.0], [1.0])
    with pytest.raises(InvalidParams):
        paired_t_test([1.0], [2.0])


# Field statistics and summaries

def test_gradient_energy_and_jacobian():
    grid = Grid((5, 3, 3))
    vectors = np.zeros((5, 3, 3, 3))
    vectors[..., 0] = 0.5 * np.arange(5.0)[:, None, None]
    ddf = DisplacementField(grid, vectors)
    mask = np.zeros((5, 3, 3), dtype=bool)
    mask[:4] = True
    assert gradient_energy(ddf, mask) == pytest.approx(0.25)
    np.testing.assert_allclose(jacobian_determinant(ddf)[:4], 1.5)
    np.testing.assert_allclose(jacobian_determinant(DisplacementField.zeros(grid)), 1.0)
    with pytest.raises(EmptyMask):
        gradient_energy(ddf, np.zeros((5, 3, 3), dtype=bool))


def test_summaries_and_markers():
    assert summarize([2.0]) == (2.0, 0.0)
    mean, std = summarize([1.0, 2.0, 3.0])
    assert (mean, std) == (2.0, 1.0)
    assert significance_marker(0.0005) == "**"
    assert significance_marker(0.01) == "*"
    assert significance_marker(0.2) == ""
    assert significance_marker(None) == ""
