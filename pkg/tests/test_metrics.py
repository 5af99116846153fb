"""Metric oracles, degenerate conventions, stitching and report plumbing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smolmapseg.evaluation import (
    DEGRADED_IOU,
    BinaryMetrics,
    ClassEval,
    ConfusionCounts,
    EvalReport,
    compare_models,
    confusion,
    format_comparison,
    metrics_from_counts,
    overlay_mask,
    stitch_sheet,
)


def brute_force_counts(pred, gt):
    tp = fp = fn = 0
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif g and not p:
            fn += 1
    return tp, fp, fn


def brute_force_metrics(tp, fp, fn):
    if tp == fp == fn == 0:
        return 1.0, 1.0, 1.0
    iou = tp / (tp + fp + fn) if tp + fp + fn else 0.0
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return iou, prec, rec


def test_confusion_matches_bruteforce_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        pred = rng.integers(0, 2, size=(8, 8), dtype=np.uint8)
        gt = rng.integers(0, 2, size=(8, 8), dtype=np.uint8)
        c = confusion(pred, gt)
        assert (c.tp, c.fp, c.fn) == brute_force_counts(pred, gt)
        m = metrics_from_counts(c)
        e_iou, e_prec, e_rec = brute_force_metrics(c.tp, c.fp, c.fn)
        assert abs(m.iou - e_iou) <= 1e-12
        assert abs(m.precision - e_prec) <= 1e-12
        assert abs(m.recall - e_rec) <= 1e-12


def test_degenerate_conventions():
    # both empty: all three metrics are 1
    assert metrics_from_counts(ConfusionCounts(0, 0, 0)) == BinaryMetrics(1.0, 1.0, 1.0)
    # prediction only: recall has tp+fn = 0
    m = metrics_from_counts(ConfusionCounts(0, 5, 0))
    assert (m.iou, m.precision, m.recall) == (0.0, 0.0, 0.0)
    # ground truth only: precision has tp+fp = 0
    m = metrics_from_counts(ConfusionCounts(0, 0, 7))
    assert (m.iou, m.precision, m.recall) == (0.0, 0.0, 0.0)
    # perfect match
    m = metrics_from_counts(ConfusionCounts(9, 0, 0))
    assert (m.iou, m.precision, m.recall) == (1.0, 1.0, 1.0)


def test_confusion_ignores_values_beyond_one():
    pred = np.array([[0, 2], [3, 0]], np.uint8)
    gt = np.array([[0, 1], [0, 5]], np.uint8)
    c = confusion(pred, gt)
    assert (c.tp, c.fp, c.fn) == (1, 1, 1)


def test_confusion_shape_mismatch():
    with pytest.raises(ValueError):
        confusion(np.zeros((4, 4)), np.zeros((4, 5)))


def test_counts_validate_and_add():
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 0, 0)
    total = ConfusionCounts(1, 2, 3) + ConfusionCounts(10, 20, 30)
    assert (total.tp, total.fp, total.fn) == (11, 22, 33)


@settings(max_examples=60, deadline=None)
@given(
    tp=st.integers(0, 10**6),
    fp=st.integers(0, 10**6),
    fn=st.integers(0, 10**6),
)
def test_metric_identities(tp, fp, fn):
    m = metrics_from_counts(ConfusionCounts(tp, fp, fn))
    assert 0.0 <= m.iou <= 1.0
    assert 0.0 <= m.precision <= 1.0
    assert 0.0 <= m.recall <= 1.0
    # intersection over union never beats either ratio
    assert m.iou <= m.precision + 1e-12
    assert m.iou <= m.recall + 1e-12


def test_swapping_pred_and_gt_swaps_precision_recall():
    rng = np.random.default_rng(4)
    pred = rng.integers(0, 2, size=(16, 16), dtype=np.uint8)
    gt = rng.integers(0, 2, size=(16, 16), dtype=np.uint8)
    a = metrics_from_counts(confusion(pred, gt))
    b = metrics_from_counts(confusion(gt, pred))
    assert a.iou == b.iou
    assert a.precision == b.recall
    assert a.recall == b.precision


def test_micro_average_pools_counts_not_scores():
    # one patch perfect, one patch empty-vs-full: pooled iou sits between,
    # weighted by pixel counts rather than averaging 1.0 and 0.0
    perfect = confusion(np.ones((4, 4)), np.ones((4, 4)))
    missed = confusion(np.zeros((4, 4)), np.ones((4, 4)))
    pooled = metrics_from_counts(perfect + missed)
    assert pooled.iou == pytest.approx(16 / 32)
    naive = (1.0 + 0.0) / 2
    assert pooled.iou == pytest.approx(naive)  # coincidence for equal sizes
    bigger = confusion(np.ones((8, 8)), np.ones((8, 8)))
    pooled2 = metrics_from_counts(bigger + missed)
    assert pooled2.iou == pytest.approx(64 / 80)  # dominated by the big patch


# --- stitching ----------------------------------------------------------------


def test_stitch_roundtrip_bijection():
    rng = np.random.default_rng(7)
    sheet = rng.integers(0, 2, size=(96, 64), dtype=np.uint8)
    tiles = [
        (r, c, sheet[r * 32 : (r + 1) * 32, c * 32 : (c + 1) * 32])
        for r in range(3)
        for c in range(2)
    ]
    assert np.array_equal(stitch_sheet(tiles, 96, 64), sheet)


def test_stitch_margins_stay_zero():
    tile = np.ones((32, 32), np.uint8)
    out = stitch_sheet([(0, 0, tile)], 50, 70)
    assert out[:32, :32].all()
    assert not out[32:, :].any()
    assert not out[:, 32:].any()


def test_stitch_rejects_duplicates_and_overflow():
    tile = np.ones((32, 32), np.uint8)
    with pytest.raises(ValueError, match="duplicate"):
        stitch_sheet([(0, 0, tile), (0, 0, tile)], 64, 64)
    with pytest.raises(ValueError, match="outside"):
        stitch_sheet([(1, 0, tile)], 40, 40)


def test_stitch_binarizes_tiles():
    tile = np.full((16, 16), 7, np.uint8)
    out = stitch_sheet([(0, 0, tile)], 16, 16)
    assert set(np.unique(out)) == {1}


# --- overlay ------------------------------------------------------------------


def test_overlay_blends_only_masked_pixels():
    img = np.full((4, 4, 3), 100, np.uint8)
    mask = np.zeros((4, 4), np.uint8)
    mask[0, 0] = 1
    out = overlay_mask(img, mask, color=(200, 0, 0), alpha=0.5)
    assert tuple(out[0, 0]) == (150, 50, 50)
    assert tuple(out[1, 1]) == (100, 100, 100)
    with pytest.raises(ValueError):
        overlay_mask(img, np.zeros((5, 4), np.uint8))


# --- reports and comparison ---------------------------------------------------


def _class_eval(cid, name, tp, fp, fn, n_pairs=10):
    c = ConfusionCounts(tp, fp, fn)
    return ClassEval(cid, name, c, metrics_from_counts(c), n_pairs)


def test_report_mean_and_degraded_flags():
    report = EvalReport(
        model_kind="smolmapseg",
        per_class={
            1: _class_eval(1, "a", 90, 5, 5),
            2: _class_eval(2, "b", 10, 45, 45),
        },
    )
    assert report.per_class[1].metrics.iou == pytest.approx(0.9)
    assert report.per_class[2].metrics.iou == pytest.approx(0.1)
    assert report.mean_iou == pytest.approx(0.5)
    assert report.degraded_classes == [2]
    assert report.per_class[2].degraded
    assert not report.per_class[1].degraded
    d = report.to_dict()
    assert d["degraded_classes"] == [2]
    assert d["classes"][1]["degraded"] is True


def test_degraded_threshold_is_half():
    assert DEGRADED_IOU == 0.5
    exactly = _class_eval(1, "edge", 1, 1, 0)  # iou 0.5
    assert not exactly.degraded


def test_report_save_roundtrip(tmp_path):
    import json

    report = EvalReport(
        model_kind="smolmapseg",
        per_class={1: _class_eval(1, "a", 3, 1, 0)},
        dataset_id="ds",
        threshold=0.5,
    )
    path = tmp_path / "report.json"
    report.save(path)
    data = json.loads(path.read_text())
    assert data["model_kind"] == "smolmapseg"
    assert data["classes"][0]["counts"] == {"tp": 3, "fp": 1, "fn": 0}


def test_compare_models_rows_and_winner():
    smol = EvalReport(
        model_kind="smolmapseg",
        per_class={1: _class_eval(1, "a", 9, 1, 1), 2: _class_eval(2, "b", 8, 1, 1)},
    )
    unet = EvalReport(
        model_kind="unet",
        per_class={1: _class_eval(1, "a", 5, 5, 5), 2: _class_eval(2, "b", 9, 0, 0)},
    )
    cmp = compare_models(smol, unet)
    assert [r["class_id"] for r in cmp["rows"]] == [1, 2]
    assert cmp["rows"][0]["winner"] == "smol"
    assert cmp["rows"][1]["winner"] == "unet"
    assert cmp["mean"]["winner"] == "smol"
    text = format_comparison(cmp)
    assert "a (1)" in text and "winner" in text

    tie = compare_models(smol, smol)
    assert tie["mean"]["winner"] == ""
    assert all(r["winner"] == "" for r in tie["rows"])


def test_compare_models_rejects_disjoint_class_sets():
    a = EvalReport(model_kind="smolmapseg", per_class={1: _class_eval(1, "a", 1, 0, 0)})
    b = EvalReport(model_kind="unet", per_class={2: _class_eval(2, "b", 1, 0, 0)})
    with pytest.raises(ValueError):
        compare_models(a, b)
