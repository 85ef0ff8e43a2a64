import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairlong import autodiff as ad
from fairlong.autodiff import NumericError, ShapeError, Tensor


def _fd(f, x, tol=1e-6):
    assert ad.finite_difference_check(f, x) < tol


def _rand(seed, *shape):
    return np.random.default_rng(seed).standard_normal(shape)


UNARY = {
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "exp": ad.exp,
    "softplus": ad.softplus,
    "log": lambda x: ad.log(ad.add(ad.mul(x, x), 1.0)),
    "abs": lambda x: ad.abs_(ad.add(x, 10.0)),
    "relu": lambda x: ad.maximum(x, 0.0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("seed", range(5))
def test_unary_gradients(name, seed):
    w = _rand(100 + seed, 4, 3)
    _fd(lambda x: ad.sum_(ad.mul(UNARY[name](x), Tensor(w))), _rand(seed, 4, 3))


@pytest.mark.parametrize("seed", range(5))
def test_matmul_add_bias_gradients(seed):
    b = _rand(seed + 1, 3, 2)
    bias = _rand(seed + 2, 2)
    _fd(lambda x: ad.sum_(ad.tanh(ad.add_bias(x @ Tensor(b), Tensor(bias)))), _rand(seed, 5, 3))
    a = _rand(seed + 3, 5, 3)
    _fd(lambda w: ad.sum_(ad.sigmoid(Tensor(a) @ w)), b)
    _fd(lambda v: ad.sum_(ad.tanh(ad.add_bias(Tensor(a) @ Tensor(b), v))), bias)


@pytest.mark.parametrize("seed", range(5))
def test_structural_ops_gradients(seed):
    w = _rand(seed + 7, 6, 2)
    _fd(lambda x: ad.sum_(ad.mul(ad.concat([x, ad.scale(x, 2.0)], axis=0), Tensor(w))), _rand(seed, 3, 2))
    _fd(lambda x: ad.sum_(ad.mul(ad.reshape(x, (6, 2)), Tensor(w))), _rand(seed, 3, 4))
    _fd(lambda x: ad.sum_(ad.tanh(x[np.array([0, 2, 2])])), _rand(seed, 4, 2))
    _fd(lambda x: ad.sum_(ad.tanh(x[:, 1:])), _rand(seed, 4, 3))
    _fd(lambda x: ad.sum_(ad.exp(ad.mean(x, axis=0))), _rand(seed, 4, 3))
    _fd(lambda x: ad.sum_(ad.tanh(ad.sum_(x, axis=1))), _rand(seed, 4, 3))


@pytest.mark.parametrize("seed", range(5))
def test_pairwise_gradients(seed):
    b = _rand(seed + 11, 5, 3)
    _fd(lambda x: ad.sum_(ad.exp(ad.scale(ad.pairwise_sqdist(x, Tensor(b)), -0.1))), _rand(seed, 4, 3))
    _fd(lambda x: ad.sum_(ad.pairwise_dist(x, Tensor(b))), _rand(seed, 4, 3))
    _fd(lambda x: ad.sum_(ad.exp(ad.scale(ad.pairwise_sqdist(x, x), -0.1))), _rand(seed, 4, 3))


def test_pairwise_values_match_direct_computation():
    a, b = _rand(0, 6, 4), _rand(1, 5, 4)
    direct = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    np.testing.assert_allclose(ad.pairwise_sqdist(Tensor(a), Tensor(b)).data, direct, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(ad.pairwise_dist(Tensor(a), Tensor(b)).data, np.sqrt(direct), rtol=1e-12)


def test_pairwise_dist_gradient_at_coincident_points_is_zero():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    ad.backward(ad.sum_(ad.pairwise_dist(x, Tensor(np.zeros((1, 3))))))
    assert np.all(x.grad == 0.0)


@given(st.floats(-5, 5), st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_scalar_broadcast_matches_numpy(c, vals):
    v = np.array(vals)
    np.testing.assert_array_equal(ad.add(Tensor(v), c).data, v + c)
    np.testing.assert_array_equal(ad.mul(Tensor(v), Tensor(c)).data, v * c)
    np.testing.assert_array_equal(ad.sub(Tensor(c), Tensor(v)).data, c - v)


def test_scalar_broadcast_gradient_sums():
    c = Tensor(2.0, requires_grad=True)
    x = Tensor(np.arange(4.0), requires_grad=True)
    ad.backward(ad.sum_(ad.mul(x, c)))
    assert c.grad == pytest.approx(6.0)
    np.testing.assert_array_equal(x.grad, np.full(4, 2.0))


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ad.add_bias(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))


def test_non_finite_forward_raises():
    with pytest.raises(NumericError):
        ad.log(Tensor(np.array([0.0, 1.0])))
    with pytest.raises(NumericError):
        ad.exp(Tensor(np.array([1000.0])))


def test_softplus_and_sigmoid_stable_at_extremes():
    x = Tensor(np.array([-800.0, 0.0, 800.0]))
    np.testing.assert_allclose(ad.softplus(x).data, [0.0, np.log(2.0), 800.0])
    np.testing.assert_allclose(ad.sigmoid(x).data, [0.0, 0.5, 1.0])


def test_shared_subexpression_accumulates():
    # f = x*x + x*x uses x four times; df/dx = 4x
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    sq = ad.mul(x, x)
    ad.backward(ad.sum_(ad.add(sq, sq)))
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_gradients_accumulate_across_backward_calls():
    x = Tensor(np.array([3.0]), requires_grad=True)
    ad.backward(ad.sum_(ad.scale(x, 2.0)))
    ad.backward(ad.sum_(ad.scale(x, 2.0)))
    assert x.grad[0] == 4.0
    x.zero_grad()
    assert x.grad[0] == 0.0


def test_backward_needs_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        ad.backward(ad.scale(x, 2.0))


def test_constants_receive_no_gradient():
    x = Tensor(np.ones(2), requires_grad=True)
    c = ad.constant(np.ones(2))
    ad.backward(ad.sum_(ad.mul(x, c)))
    assert not c.requires_grad
    assert np.all(c.grad == 0)


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array([0.1]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = ad.scale(y, 1.0)
    ad.backward(ad.sum_(y))
    assert x.grad[0] == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_composite_expression_fd_property(seed):
    w = _rand(seed + 1, 3, 3)
    f = lambda x: ad.mean(ad.softplus(ad.add_bias(ad.tanh(x @ Tensor(w)), Tensor(np.ones(3)))))  # noqa: E731
    assert ad.finite_difference_check(f, _rand(seed, 2, 3)) < 1e-6
