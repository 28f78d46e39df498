import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from rgbtseg import tensor as T
from rgbtseg.gradcheck import check_tensors, finite_diff_check
from rgbtseg.tensor import DomainError, NonFiniteError, ShapeError, Tensor, precision


def test_softmax_of_equal_entries_is_uniform():
    out = T.softmax(Tensor([0.0, 0.0]), axis=-1)
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_l2_normalize_3_4():
    np.testing.assert_allclose(T.l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8], rtol=1e-6)


def test_sigmoid_gradient_at_zero():
    x = Tensor(np.zeros(5), requires_grad=True)
    T.sigmoid(x).sum().backward()
    np.testing.assert_allclose(x.grad, 0.25)


def test_broadcast_add_gradient_sums_back():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    (a + b).sum().backward()
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])
    assert a.grad.shape == (2, 3)


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_domain_errors_name_the_op():
    with pytest.raises(DomainError, match="log"):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError, match="div"):
        T.div(Tensor([1.0]), Tensor([0.0]))


def test_non_finite_result_raises_with_op_name():
    with pytest.raises(NonFiniteError) as err:
        T.exp(Tensor([1000.0]))
    assert err.value.op == "exp"


def test_float32_by_default_and_float64_under_precision():
    assert Tensor([1.0]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_no_grad_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_shared_subexpression_accumulates():
    x = Tensor([3.0], requires_grad=True)
    y = x * x + x
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_max_gradient_goes_to_argmax():
    x = Tensor([[1.0, 5.0, 2.0]], requires_grad=True)
    x.max(axis=1).sum().backward()
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_masked_softmax_masked_entries_exactly_zero():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
    mask = np.array([[1, 1, 0, 1], [0, 1, 1, 1], [1, 0, 0, 1]], dtype=bool)
    out = T.masked_softmax(x, mask).data
    assert np.all(out[~mask] == 0.0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_finite_diff_polynomial():
    rep = finite_diff_check(lambda x: (x * x).sum(), Tensor([1.0, 2.0]))
    assert rep.passed and rep.max_rel_err < 1e-6


def test_finite_diff_sin():
    x = Tensor(np.random.default_rng(3).uniform(-3, 3, 7))
    with precision(np.float64):
        xx = Tensor(x.data, requires_grad=True)
        T.sin(xx).sum().backward()
        np.testing.assert_allclose(xx.grad, np.cos(xx.data), rtol=1e-12)
    assert finite_diff_check(lambda v: T.sin(v).sum(), x).passed


def test_finite_diff_rejects_float32():
    x = Tensor([1.0], requires_grad=True)
    with pytest.raises(TypeError):
        check_tensors(lambda: x.sum(), [x], "f32")


def test_finite_diff_reports_failure_for_wrong_adjoint():
    class BadSquare(T.Function):
        name = "bad_square"

        def forward(self, x):
            self.x = x
            return x * x

        def backward(self, g):
            return g * self.x          # missing factor 2

    rep = finite_diff_check(lambda x: BadSquare.apply(x).sum(), Tensor([1.0, -2.0, 0.5]))
    assert not rep.passed and rep.max_rel_err > 0.4


@pytest.mark.parametrize("seed", range(5))
def test_elementwise_gradients_on_five_seeds(seed):
    rng = np.random.default_rng(seed)
    cases = {
        "exp": lambda x: T.exp(x), "tanh": T.tanh, "sigmoid": T.sigmoid,
        "softmax": lambda x: T.softmax(x, axis=0), "l2": lambda x: T.l2_normalize(x, axis=1),
    }
    for name, fn in cases.items():
        x = Tensor(rng.standard_normal((3, 4)))
        w = rng.standard_normal((3, 4))
        rep = finite_diff_check(lambda v: (fn(v) * Tensor(w, dtype=v.dtype)).sum(), x, op_name=name)
        assert rep.passed, rep.line()


shapes = hnp.array_shapes(min_dims=0, max_dims=3, min_side=1, max_side=3)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_broadcast_is_associative_in_shape(data):
    a = data.draw(shapes)
    b = data.draw(hnp.broadcastable_shapes(a, max_dims=3, max_side=3))
    c = data.draw(hnp.broadcastable_shapes(np.broadcast_shapes(a, b), max_dims=3, max_side=3))
    left = T.broadcast_shape(a, T.broadcast_shape(b, c))
    right = T.broadcast_shape(T.broadcast_shape(a, b), c)
    assert left == right


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, (3, 5), elements=st.floats(-30, 30)),
       st.floats(-50, 50))
def test_softmax_sums_to_one_and_ignores_shift(x, c):
    with precision(np.float64):
        p = T.softmax(Tensor(x), axis=-1).data
        q = T.softmax(Tensor(x + c), axis=-1).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(p, q, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, (2, 3), elements=st.floats(-5, 5)),
       hnp.arrays(np.float64, (3,), elements=st.floats(-5, 5)))
def test_add_mul_match_numpy(a, b):
    with precision(np.float64):
        np.testing.assert_allclose((Tensor(a) + Tensor(b)).data, a + b)
        np.testing.assert_allclose((Tensor(a) * Tensor(b)).data, a * b)
