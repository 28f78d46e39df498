import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgbtseg.fdam import DecoupleLossTerms
from rgbtseg.nn import mean_cross_entropy
from rgbtseg.objective import LossWeights, dis_loss, kg_sparsity, ohem_ce, ohem_select, total_loss
from rgbtseg.tensor import Tensor, precision


def logits_for_probs(p_true):
    """Two-class logits whose class-0 probability equals ``p_true`` (labels all 0)."""
    p = np.asarray(p_true, dtype=np.float64)
    lg = np.zeros((1, 2, 1, p.size))
    lg[0, 0, 0] = np.log(p)
    lg[0, 1, 0] = np.log(1 - p)
    return lg, np.zeros((1, 1, p.size), dtype=np.int64)


def test_ohem_hand_example():
    lg, lab = logits_for_probs([0.9, 0.6, 0.5, 0.95])
    with precision(np.float64):
        kept = ohem_select(Tensor(lg), lab, 0.7, min_kept=1)
        loss = float(ohem_ce(Tensor(lg), lab, 0.7, min_kept=1).data)
    np.testing.assert_array_equal(kept[0, 0], [False, True, True, False])
    assert loss == pytest.approx((-math.log(0.6) - math.log(0.5)) / 2, abs=1e-12)
    assert loss == pytest.approx(0.6020, abs=5e-5)


def test_ohem_theta_one_is_plain_ce():
    rng = np.random.default_rng(0)
    lg = rng.standard_normal((2, 3, 4, 4))
    lab = rng.integers(0, 3, (2, 4, 4))
    with precision(np.float64):
        a = float(ohem_ce(Tensor(lg), lab, theta=1.0).data)
        b = float(mean_cross_entropy(Tensor(lg), lab)[0].data)
    assert a == pytest.approx(b, rel=1e-12)


def test_ohem_floor_keeps_hardest():
    lg, lab = logits_for_probs([0.9, 0.8, 0.95, 0.85])
    kept = ohem_select(lg, lab, 0.7, min_kept=2)
    np.testing.assert_array_equal(kept[0, 0], [False, True, False, True])


def test_ohem_ignores_void_and_warns_when_empty():
    lg, lab = logits_for_probs([0.1, 0.2])
    lab[0, 0, 0] = 65535
    assert ohem_select(lg, lab, 0.7).sum() == 1
    with pytest.warns(RuntimeWarning):
        v = ohem_ce(lg, np.full_like(lab, 65535))
    assert float(v.data) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_ohem_kept_count_monotone_in_theta(seed, t1, t2):
    rng = np.random.default_rng(seed)
    lg = rng.standard_normal((1, 4, 5, 5)) * 2
    lab = rng.integers(0, 4, (1, 5, 5))
    lo, hi = sorted((t1, t2))
    assert ohem_select(lg, lab, lo).sum() <= ohem_select(lg, lab, hi).sum()


def test_dis_loss_examples():
    w = LossWeights()
    zero = DecoupleLossTerms([0.0] * 4, [0.0] * 4, [0.0] * 4)
    assert dis_loss(zero, w) == 0.0
    align_only = DecoupleLossTerms([1.0] * 4, [0.0] * 4, [0.0] * 4)
    assert dis_loss(align_only, w) == pytest.approx(0.2)
    assert (w.lambda_align, w.lambda_sem, w.lambda_orth, w.lambda_kg, w.theta_ohem) == (0.2, 0.1, 0.05, 0.01, 0.7)


def test_kg_sparsity_value_and_subgradient():
    with precision(np.float64):
        a = Tensor(np.array([[0.5, -0.5], [0.0, 0.0]]), requires_grad=True)
        v = kg_sparsity(a)
        v.backward()
    assert float(v.data) == 1.0
    np.testing.assert_array_equal(a.grad, [[1.0, -1.0], [0.0, 0.0]])
    assert float(kg_sparsity(Tensor(np.zeros((3, 3)))).data) == 0.0


def test_total_loss_examples():
    w = LossWeights()
    assert total_loss(1.0, 0.0, 0.0, w).total == 1.0
    assert total_loss(1.0, 2.0, 3.0, w).total == pytest.approx(1.23)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 1), st.floats(0, 1))
def test_total_loss_decomposition(seg, dis, kg, ld, lk):
    w = LossWeights(lambda_dis=ld, lambda_kg=lk)
    rep = total_loss(Tensor(seg, dtype=np.float64), dis, kg, w)
    assert abs(rep.total - (rep.seg + ld * rep.dis + lk * rep.kg)) <= 1e-6


def test_weights_validated():
    with pytest.raises(ValueError):
        LossWeights(lambda_dis=-1)
    with pytest.raises(ValueError):
        LossWeights(theta_ohem=0.0)
