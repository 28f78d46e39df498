import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgbtseg import sgcm
from rgbtseg.sgcm import (
    SGCM, DegenerateGraphError, GATLayer, Taxonomy, TaxonomyError, aggregate_nodes, build_cooccurrence_prior,
    build_hierarchy_prior, calibrate, combine_priors, effective_adjacency, graph_logits, sym_norm,
)
from rgbtseg.tensor import DomainError, ShapeError, Tensor, precision


TOY = Taxonomy.from_paths([
    "vehicle/car/sedan", "vehicle/car/suv", "vehicle/bike/cycle",
    "person/walk/adult", "person/walk/child", "person/ride/rider",
])


def brute_distance(a, b):
    """Edges between two leaves on the tree built from explicit node sets."""
    up = lambda p: [p[:k] for k in range(len(p), -1, -1)]     # leaf ... root
    ua, ub = up(a), up(b)
    for i, node in enumerate(ua):
        if node in ub:
            return i + ub.index(node)
    raise AssertionError("no common ancestor")


def test_hierarchy_examples():
    a = build_hierarchy_prior(TOY)
    assert a[0, 1] == pytest.approx(math.exp(-1))      # siblings
    assert a[0, 3] == pytest.approx(math.exp(-3))      # different top groups, depth 3
    assert a[0, 0] == 1.0


def test_hierarchy_matches_brute_force():
    a = build_hierarchy_prior(TOY, s=2.0)
    for i, j in itertools.product(range(6), repeat=2):
        assert abs(a[i, j] - math.exp(-brute_distance(TOY.leaves[i], TOY.leaves[j]) / 2.0)) <= 1e-12
    np.testing.assert_array_equal(a, a.T)
    assert np.all((a > 0) & (a <= 1))


def test_cooccurrence_formula_and_containment():
    # class 0 in 10 images, class 1 in 4, together in 2
    labels = [np.array([[0, 1]])] * 2 + [np.array([[0]])] * 8 + [np.array([[1]])] * 2
    a = build_cooccurrence_prior(labels, 3)
    assert a[0, 1] == pytest.approx(0.2) and a[1, 0] == pytest.approx(0.2)
    # class 2 only ever alongside class 0
    labels2 = [np.array([[0, 2]])] * 3 + [np.array([[0]])] * 3
    b = build_cooccurrence_prior(labels2, 3)
    assert b[0, 2] == pytest.approx(3 / 6)
    np.testing.assert_array_equal(np.diag(b), 1.0)


def test_cooccurrence_matches_hand_count_on_toy_split():
    rng = np.random.default_rng(0)
    images = [rng.choice(6, size=(4, 4)) % 6 for _ in range(5)]
    images[0][:] = 2
    images[1][:2] = 65535
    got = build_cooccurrence_prior(images, 6)
    pres = [set(np.unique(im[im != 65535]).tolist()) for im in images]
    for i, j in itertools.product(range(6), repeat=2):
        if i == j:
            assert got[i, j] == 1.0
            continue
        ni, nj = sum(i in p for p in pres), sum(j in p for p in pres)
        nij = sum(i in p and j in p for p in pres)
        want = nij / max(ni, nj) if max(ni, nj) else 0.0
        assert got[i, j] == want


def test_cooccurrence_rejects_out_of_range():
    with pytest.raises(ValueError):
        build_cooccurrence_prior([np.array([[5]])], 3)


def test_combine_priors_examples():
    np.testing.assert_allclose(combine_priors(np.ones((2, 2)), None, (1.0, 0.0)), 0.5)
    anti = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(sym_norm(anti), anti)
    assert sgcm.PRIOR_WEIGHTS == (0.6, 0.4)
    with pytest.raises(DomainError):
        combine_priors(-np.ones((2, 2)), None)


def test_combine_priors_zero_degree_row():
    a = np.zeros((3, 3)); a[0, 0] = a[1, 1] = 1.0
    out = combine_priors(a, None, (1.0, 0.0))
    assert np.all(np.isfinite(out)) and np.all(out[2] == 0)


def test_effective_adjacency_zero_residual_and_symmetry():
    rng = np.random.default_rng(0)
    raw = rng.uniform(0, 1, (5, 5))
    a_p = combine_priors(raw, None)
    with precision(np.float64):
        out = effective_adjacency(a_p, Tensor(np.zeros((5, 5)))).data
        np.testing.assert_allclose(out, sym_norm(a_p), atol=1e-7)
        for seed in range(5):
            d = Tensor(np.random.default_rng(seed).standard_normal((5, 5)) * 0.2)
            adj = effective_adjacency(a_p, d).data
            assert np.abs(adj - adj.T).max() <= 1e-12 and adj.min() >= 0


def test_effective_adjacency_clamps_negative_edges():
    a_p = np.full((3, 3), 0.3)
    delta = np.zeros((3, 3)); delta[0, 1] = delta[1, 0] = -1.0
    with precision(np.float64):
        adj = effective_adjacency(a_p, Tensor(delta)).data
    assert adj[0, 1] == 0.0 and not sgcm.edge_mask(adj)[0, 1]


def test_aggregate_uniform_is_spatial_mean():
    f = np.random.default_rng(0).standard_normal((2, 5, 4, 4))
    with precision(np.float64):
        h = aggregate_nodes(Tensor(f), Tensor(np.zeros((2, 3, 4, 4)))).data
    mean = f.mean(axis=(2, 3))
    for k in range(3):
        np.testing.assert_allclose(h[:, k], mean, atol=1e-6)


def test_aggregate_one_hot_region_is_masked_mean():
    f = np.random.default_rng(1).standard_normal((1, 3, 4, 4))
    region = np.zeros((4, 4), bool); region[:2, 1:3] = True
    l0 = np.zeros((1, 2, 4, 4)); l0[0, 0][region] = 60.0; l0[0, 1][~region] = 60.0
    with precision(np.float64):
        h = aggregate_nodes(Tensor(f), Tensor(l0)).data
    # the pooling epsilon biases the mean by eps / region size
    np.testing.assert_allclose(h[0, 0], f[0][:, region].mean(axis=1), rtol=1e-6)
    np.testing.assert_allclose(h[0, 1], f[0][:, ~region].mean(axis=1), rtol=1e-6)


def test_aggregate_empty_class_is_finite_zero():
    f = np.random.default_rng(2).standard_normal((1, 3, 2, 2))
    l0 = np.zeros((1, 2, 2, 2)); l0[:, 0] = 700.0       # class 1 weight underflows to 0
    with precision(np.float64):
        h = aggregate_nodes(Tensor(f), Tensor(l0)).data
    assert np.all(np.isfinite(h)) and np.abs(h[0, 1]).max() < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_aggregate_spatial_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((1, 4, 3, 5))
    l0 = rng.standard_normal((1, 3, 3, 5))
    perm = rng.permutation(15)
    pf = f.reshape(1, 4, 15)[:, :, perm].reshape(f.shape)
    pl = l0.reshape(1, 3, 15)[:, :, perm].reshape(l0.shape)
    with precision(np.float64):
        a = aggregate_nodes(Tensor(f), Tensor(l0)).data
        b = aggregate_nodes(Tensor(pf), Tensor(pl)).data
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_gat_uniform_attention_and_mask():
    layer = GATLayer(4, 2, heads=2, rng=np.random.default_rng(0))
    with precision(np.float64):
        h = Tensor(np.ones((1, 3, 4)))
        alpha = layer.attention(h, Tensor(np.full((3, 3), 0.5))).data
        np.testing.assert_allclose(alpha, 1 / 3, atol=1e-12)
        adj = np.full((3, 3), 0.5); adj[0, 2] = adj[2, 0] = 0.0
        alpha = layer.attention(h, Tensor(adj)).data
    assert np.all(alpha[..., 0, 2] == 0.0) and np.all(alpha[..., 2, 0] == 0.0)
    np.testing.assert_allclose(alpha.sum(-1), 1.0, atol=1e-6)


def test_gat_log_prior_shift_matches_scalar_softmax():
    layer = GATLayer(2, 2, heads=1, rng=np.random.default_rng(0))
    adj = np.array([[0.2, 0.4, 0.2], [0.4, 0.2, 0.2], [0.2, 0.2, 0.2]])
    with precision(np.float64):
        alpha = layer.attention(Tensor(np.ones((1, 3, 2))), Tensor(adj)).data[0, 0]
    eps = sgcm.LOG_EPS
    logits = np.log(adj[0] + eps)
    want = np.exp(logits) / np.exp(logits).sum()       # identical features cancel the learnt term
    np.testing.assert_allclose(alpha[0], want, atol=1e-12)
    assert alpha[0, 1] / alpha[0, 0] == pytest.approx((0.4 + eps) / (0.2 + eps))


def test_gat_rows_and_heads():
    rng = np.random.default_rng(3)
    for merge, width in (("concat", 3 * 2), ("average", 2)):
        layer = GATLayer(5, 2, heads=3, merge=merge, rng=rng)
        with precision(np.float64):
            out = layer(Tensor(rng.standard_normal((2, 4, 5))), Tensor(np.eye(4) + 0.1))
        assert out.shape == (2, 4, width)
    with pytest.raises(ValueError):
        GATLayer(2, 2, merge="max")


def test_degenerate_graph_raises():
    adj = np.eye(3); adj[1, 1] = 0.0
    with pytest.raises(DegenerateGraphError):
        GATLayer(2, 2, heads=1).attention(Tensor(np.ones((1, 3, 2))), Tensor(adj))


def test_isolated_node_keeps_its_own_feature():
    layer = GATLayer(2, 2, heads=1, rng=np.random.default_rng(0))
    adj = np.ones((3, 3)); adj[0, 1:] = adj[1:, 0] = 0.0
    with precision(np.float64):
        h = Tensor(np.random.default_rng(1).standard_normal((1, 3, 2)))
        out = layer(h, Tensor(adj)).data
        wh = (h.data[0] @ layer.weight.data[0])
    np.testing.assert_allclose(out[0, 0], wh[0], atol=1e-12)


def test_graph_logits_examples():
    f = np.random.default_rng(0).standard_normal((1, 3, 2, 2))
    h = np.zeros((1, 2, 3)); h[0, 1, 2] = 1.0
    with precision(np.float64):
        lg = graph_logits(Tensor(h), Tensor(f)).data
    np.testing.assert_array_equal(lg[0, 0], 0.0)
    np.testing.assert_allclose(lg[0, 1], f[0, 2])
    hand = np.array([[[1.0, 2.0], [0.5, -1.0]]])              # 2 classes, D=2
    fm = np.array([[[[3.0], [1.0]], [[-1.0], [2.0]]]])       # [1, 2, 2, 1]
    with precision(np.float64):
        lg = graph_logits(Tensor(hand), Tensor(fm)).data
    np.testing.assert_allclose(lg[0, :, :, 0], [[1.0, 5.0], [2.5, -1.5]])
    with pytest.raises(ShapeError):
        graph_logits(Tensor(np.zeros((1, 2, 4))), Tensor(f))


def test_calibrate_boundaries():
    a, b = Tensor(np.ones((1, 2, 1, 1))), Tensor(np.zeros((1, 2, 1, 1)))
    np.testing.assert_allclose(calibrate(a, b, 0.85).data, 0.85)
    np.testing.assert_array_equal(calibrate(a, b, 1.0).data, a.data)
    np.testing.assert_array_equal(calibrate(a, b, 0.0).data, b.data)
    with pytest.raises(ValueError):
        calibrate(a, b, 1.5)


def test_argmax_invariant_to_per_pixel_shift():
    rng = np.random.default_rng(0)
    l0, lg = rng.standard_normal((2, 1, 4, 3, 3))
    c = rng.standard_normal((1, 1, 3, 3))
    a = calibrate(Tensor(l0), Tensor(lg)).data.argmax(1)
    b = calibrate(Tensor(l0 + c), Tensor(lg + c)).data.argmax(1)
    np.testing.assert_array_equal(a, b)


def test_residual_receives_gradient():
    m = SGCM(3, 4, combine_priors(np.ones((3, 3)), None), heads=2, rng=np.random.default_rng(0))
    rng = np.random.default_rng(1)
    out = m(Tensor(rng.standard_normal((1, 4, 3, 3))), Tensor(rng.standard_normal((1, 3, 3, 3))))
    (out.graph_logits * Tensor(rng.standard_normal(out.graph_logits.shape))).sum().backward()
    assert np.abs(m.a_delta.grad).max() > 0


def test_taxonomy_parsing():
    tax = Taxonomy.parse("# comment\nvehicle/car\n\nperson\n")
    assert tax.leaves == [("vehicle", "car"), ("person",)] and tax.distance(0, 1) == 3
    with pytest.raises(TaxonomyError, match=":2:"):
        Taxonomy.parse("a/b\na//c\n")
    with pytest.raises(TaxonomyError):
        Taxonomy.from_paths(["a/b", "a"])
    with pytest.raises(TaxonomyError):
        Taxonomy.from_paths(["a", "a"])
