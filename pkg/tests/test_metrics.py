import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgbtseg.metrics import (
    MetricsError, accumulate, alignment_epe, head_tail_partition, proxy_flow, report,
)


def conf_of(pred, truth, K):
    return accumulate(np.zeros((K, K), np.int64), np.asarray(pred), np.asarray(truth))


def test_perfect_prediction():
    t = np.array([[0, 1], [2, 1]])
    c = conf_of(t, t, 3)
    assert np.count_nonzero(c - np.diag(np.diag(c))) == 0
    assert report(c, head_n=1, tail_n=1).miou == 1.0


def test_two_class_hand_example():
    r = report(conf_of([[0, 1], [1, 1]], [[0, 0], [1, 1]], 2), head_n=1, tail_n=1)
    np.testing.assert_allclose(r.per_class_iou, [1 / 2, 2 / 3])
    assert r.miou == pytest.approx(0.5833, abs=5e-5)


def test_ignore_and_errors():
    c = conf_of([[0, 1]], [[65535, 65535]], 2)
    assert c.sum() == 0
    with pytest.raises(MetricsError):
        conf_of([[2]], [[0]], 2)
    with pytest.raises(MetricsError):
        conf_of([[0, 0]], [[0]], 2)


def test_partition_examples():
    assert head_tail_partition([100, 50, 10, 1], 1, 1) == ([0], [3])
    assert head_tail_partition([5, 5, 5, 5], 2, 1) == ([0, 1], [3])
    with pytest.raises(MetricsError):
        head_tail_partition([1, 2], 2, 1)


def test_default_partition_sizes():
    r = report(np.eye(12, dtype=np.int64) * np.arange(12, 0, -1)[:, None])
    assert (r.head_n, r.tail_n) == (2, 3)
    assert r.head_ids == [0, 1] and r.tail_ids == [9, 10, 11]


def test_undefined_classes_are_skipped():
    c = conf_of([[0, 0, 1]], [[0, 1, 1]], 4)
    r = report(c, head_n=1, tail_n=1)
    assert r.skipped == 2
    assert r.miou == pytest.approx(np.mean([1 / 2, 1 / 2]))
    assert "skipped_classes=2" in r.to_kv()
    assert "nan" in r.per_class_csv() or ",," in r.per_class_csv()


def test_aacc_is_recall_weighted_by_truth_counts():
    rng = np.random.default_rng(0)
    c = conf_of(rng.integers(0, 5, 400), rng.choice(5, 400, p=[.4, .3, .2, .05, .05]), 5)
    r = report(c)
    gt = c.sum(axis=1)
    recall = np.diag(c) / gt
    assert r.aacc == pytest.approx((gt * recall).sum() / gt.sum(), rel=1e-12)
    assert r.aacc == np.trace(c) / c.sum()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_accumulation_order_independent(seed):
    rng = np.random.default_rng(seed)
    maps = [(rng.integers(0, 4, (3, 3)), rng.integers(0, 4, (3, 3))) for _ in range(5)]
    a = np.zeros((4, 4), np.int64)
    b = np.zeros((4, 4), np.int64)
    for p, t in maps:
        accumulate(a, p, t)
    for i in rng.permutation(5):
        accumulate(b, *maps[i])
    np.testing.assert_array_equal(a, b)
    assert report(a, head_n=1, tail_n=1).to_kv() == report(b, head_n=1, tail_n=1).to_kv()


def test_epe_examples():
    gt = np.zeros((2, 4, 4)); gt[0], gt[1] = 3.0, 4.0
    mask = np.ones((4, 4), bool)
    assert alignment_epe(gt, gt, mask) == 0.0
    assert alignment_epe(np.zeros_like(gt), gt, mask) == pytest.approx(5.0)
    with pytest.raises(MetricsError):
        alignment_epe(gt, gt, np.zeros((4, 4), bool))


def test_epe_is_pixel_weighted_mean_of_object_errors():
    gt = np.zeros((2, 6, 6))
    objs = [((slice(0, 2), slice(0, 2)), (1.0, 0.0)), ((slice(3, 6), slice(1, 5)), (0.0, -2.0))]
    mask = np.zeros((6, 6), bool)
    errs, sizes = [], []
    for (sy, sx), (dy, dx) in objs:
        gt[0, sy, sx], gt[1, sy, sx] = dy, dx
        mask[sy, sx] = True
        errs.append(np.hypot(dy, dx)); sizes.append(mask[sy, sx].size)
    want = np.average(errs, weights=sizes)
    assert alignment_epe(np.zeros_like(gt), gt, mask) == pytest.approx(want)


def test_proxy_flow_of_constant_offsets():
    off = np.zeros((18, 4, 4)); off[0::2], off[1::2] = 0.5, -0.25    # (dy, dx) per tap
    flow = proxy_flow(off, 4, (16, 16))
    np.testing.assert_allclose(flow[0], 2.0)
    np.testing.assert_allclose(flow[1], -1.0)
