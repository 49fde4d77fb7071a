import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from m2h.errors import DataError
from m2h.metrics import (ODS_THRESHOLDS, MetricAccumulator, OdsAccumulator, angular_errors, confusion_matrix,
                         depth_metrics, mean_angular_error, miou, odsf)


def brute_odsf(probs, gt):
    best = 0.0
    for tau in np.round(np.arange(1, 100) / 100, 2):
        pred = probs >= tau
        tp = np.sum(pred & gt)
        fp = np.sum(pred & ~gt)
        fn = np.sum(~pred & gt)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn)
        if p + r:
            best = max(best, 2 * p * r / (p + r))
    return best


def test_miou_perfect_and_disjoint(rng):
    gt = rng.integers(0, 4, size=(2, 8, 8))
    assert miou(gt, gt, 4)[0] == 1.0
    assert miou((gt + 1) % 4, gt, 4)[0] == 0.0


def test_miou_hand_confusion():
    gt = np.ones((1, 2, 2), dtype=int)
    pred = np.array([[[1, 1], [0, 0]]])
    m, per = miou(pred, gt, 2)
    assert per[1] == pytest.approx(0.5)
    assert per[0] == 0.0
    assert m == pytest.approx(0.25)


def test_miou_ignores_absent_classes_and_ignore_index():
    gt = np.array([[[0, 0, 255, 255]]])
    pred = np.array([[[0, 0, 2, 1]]])
    m, per = miou(pred, gt, 5)
    assert m == 1.0
    assert np.isnan(per[3]) and np.isnan(per[4])


def test_confusion_matrix_counts():
    cm = confusion_matrix(np.array([0, 1, 1, 2]), np.array([0, 1, 2, 2]), 3)
    np.testing.assert_array_equal(cm, [[1, 0, 0], [0, 1, 0], [0, 1, 1]])


@settings(max_examples=30, deadline=None)
@given(labels=hnp.arrays(np.int64, (1, 3, 5), elements=st.integers(0, 3)))
def test_miou_self_is_one(labels):
    assert miou(labels, labels, 4)[0] == 1.0


def test_depth_metric_examples(rng):
    y = rng.uniform(1, 10, size=(2, 1, 4, 4))
    assert depth_metrics(y, y) == (0.0, 0.0, 1.0)
    rmse, absrel, d1 = depth_metrics(1.1 * y, y)
    assert absrel == pytest.approx(0.1)
    assert d1 == 1.0
    assert rmse == pytest.approx(np.sqrt(np.mean((0.1 * y) ** 2)))
    assert depth_metrics(1.3 * y, y)[2] == 0.0


def test_depth_metrics_mask_and_empty(rng):
    y = rng.uniform(1, 10, size=(4, 4))
    p = y.copy()
    p[0, 0] = 100.0
    mask = np.ones_like(y, dtype=bool)
    mask[0, 0] = False
    assert depth_metrics(p, y, mask) == (0.0, 0.0, 1.0)
    with pytest.raises(DataError):
        depth_metrics(p, y, np.zeros_like(mask))


def test_angular_error_examples():
    n = np.zeros((1, 3, 1, 3))
    n[:, 2] = 1.0
    assert mean_angular_error(n, n) == pytest.approx(0.0, abs=1e-6)
    ortho = np.zeros_like(n)
    ortho[:, 0] = 1.0
    assert mean_angular_error(ortho, n) == pytest.approx(90.0)
    assert mean_angular_error(-n, n) == pytest.approx(180.0)


def test_angular_error_clamps_dot():
    n = np.zeros((1, 3, 1, 1))
    n[:, 2] = 1.0 + 1e-9
    assert np.isfinite(angular_errors(n, n)).all()


def test_odsf_exact_match(rng):
    gt = rng.uniform(size=(3, 8, 8)) > 0.8
    assert odsf(gt.astype(float), gt) == 1.0


def test_odsf_uniform_half_probabilities():
    gt = np.zeros(1000, dtype=bool)
    gt[:10] = True
    value = odsf(np.full(1000, 0.5), gt)
    assert value == pytest.approx(2 * 0.01 / 1.01, rel=1e-12)
    assert value == pytest.approx(0.0198, abs=1e-4)


def test_odsf_inverted_predictions(rng):
    gt = rng.uniform(size=(4, 8, 8)) > 0.7
    assert odsf(1.0 - gt, gt) == 0.0


def test_odsf_no_positives():
    with pytest.raises(DataError):
        odsf(np.zeros((2, 4)), np.zeros((2, 4)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_odsf_matches_brute_force_and_is_order_invariant(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(size=(3, 6, 6)) > 0.7
    gt[0, 0, 0] = True
    probs = np.clip(gt * 0.4 + rng.uniform(size=gt.shape) * 0.6, 0, 1)
    assert odsf(list(probs), list(gt)) == pytest.approx(brute_odsf(probs.ravel(), gt.ravel()), abs=1e-12)
    assert odsf(list(probs[::-1]), list(gt[::-1])) == odsf(list(probs), list(gt))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), tau_index=st.integers(0, 98))
def test_f_score_monotone_toward_gt(seed, tau_index):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(size=64) > 0.7
    gt[0] = True
    probs = rng.uniform(size=64)
    moved = np.where(gt, np.maximum(probs, rng.uniform(size=64)), np.minimum(probs, rng.uniform(size=64)))
    a, b = OdsAccumulator(), OdsAccumulator()
    a.add(probs, gt)
    b.add(moved, gt)
    assert b.f_scores()[tau_index] >= a.f_scores()[tau_index] - 1e-12


def test_thresholds():
    assert len(ODS_THRESHOLDS) == 99
    assert ODS_THRESHOLDS[0] == pytest.approx(0.01) and ODS_THRESHOLDS[-1] == pytest.approx(0.99)


def test_metric_report_ranges_and_pooling(rng):
    acc = MetricAccumulator(3)
    for _ in range(2):
        labels = rng.integers(0, 3, size=(2, 4, 4))
        depth = rng.uniform(1, 5, size=(2, 1, 4, 4))
        normals = rng.normal(size=(2, 3, 4, 4))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        edges = (rng.uniform(size=(2, 1, 4, 4)) > 0.6).astype(float)
        gt = dict(labels=labels, depth=depth, normals=normals, edges=edges)
        acc.add(labels, depth * 1.1, normals, edges, gt)
    rep = acc.report()
    assert rep.samples == 4
    assert rep.miou == 1.0 and rep.odsf == 1.0
    assert rep.absrel == pytest.approx(0.1)
    assert rep.delta1 == 1.0
    assert rep.merr == pytest.approx(0.0, abs=1e-4)
    assert set(rep.summary()) == {"samples", "miou", "rmse", "absrel", "delta1", "merr", "odsf"}
