import numpy as np
import pytest

from fairlong import autodiff as ad
from fairlong.autodiff import ShapeError, Tensor
from fairlong.models import (
    Discriminator,
    Generator,
    GruCell,
    Linear,
    MlpClassifier,
    discriminator_forward,
    generator_rollout,
    gru_cell,
    mlp_forward,
)

FD_SEEDS = range(20)


def _set_param(module, dotted, value):
    *path, leaf = dotted.split(".")
    obj = module
    for part in path:
        obj = getattr(obj, part)
    setattr(obj, leaf, value)


def _param_fd(module, name, loss_fn):
    """FD check of ``loss_fn(module)`` with respect to one named parameter."""
    original = dict(module.named_parameters())[name]

    def f(p):
        _set_param(module, name, p)
        return loss_fn(module)

    try:
        return ad.finite_difference_check(f, original.data.copy())
    finally:
        _set_param(module, name, original)


def _small_mlp(seed, d=3):
    return MlpClassifier(d, (4, 5), rng=np.random.default_rng(seed))


@pytest.mark.parametrize("seed", FD_SEEDS)
def test_mlp_gradient_fd(seed):
    rng = np.random.default_rng(1000 + seed)
    m = _small_mlp(seed)
    s = (rng.random(5) < 0.5).astype(float)
    x = rng.standard_normal((5, 3))
    assert ad.finite_difference_check(lambda t: ad.sum_(m(s, t)), x) < 1e-4
    for name in ("fc1.weight", "fc2.bias", "fc3.weight"):
        assert _param_fd(m, name, lambda mod: ad.mean(mod.logits(s, x))) < 1e-4


@pytest.mark.parametrize("seed", FD_SEEDS)
def test_gru_cell_gradient_fd(seed):
    rng = np.random.default_rng(2000 + seed)
    cell = GruCell(3, 4, rng=rng)
    inp = rng.standard_normal((2, 3))
    h = rng.standard_normal((2, 4)) * 0.5
    w = Tensor(rng.standard_normal((2, 4)))
    assert ad.finite_difference_check(lambda t: ad.sum_(ad.mul(cell(t, Tensor(h)), w)), inp) < 1e-4
    assert ad.finite_difference_check(lambda t: ad.sum_(ad.mul(cell(Tensor(inp), t), w)), h) < 1e-4
    for name in ("w_gates", "u_gates", "b_cand", "u_cand"):
        assert _param_fd(cell, name, lambda c: ad.sum_(ad.mul(c(Tensor(inp), Tensor(h)), w))) < 1e-4


@pytest.mark.parametrize("seed", FD_SEEDS)
def test_generator_soft_rollout_gradient_fd(seed):
    rng = np.random.default_rng(3000 + seed)
    gen = Generator(2, noise_dim=2, hidden=(3, 4), rng=rng)
    clf = MlpClassifier(2, (3, 3), rng=rng)
    s = np.array([0.0, 1.0, 1.0])
    x1 = rng.standard_normal((3, 2))
    noise = rng.standard_normal((3, 2, 2))

    def loss(g, x=None):
        xs, ys = g.rollout(clf, s, Tensor(x1) if x is None else x, noise, mode="soft")
        return ad.add(ad.sum_(ad.tanh(xs[-1])), ad.sum_(ys[-1]))

    assert ad.finite_difference_check(lambda t: loss(gen, t), x1) < 1e-4
    for name in ("init.weight", "gru1.w_gates", "gru2.u_cand", "out.weight"):
        assert _param_fd(gen, name, loss) < 1e-4

    # gradient also reaches the decision model through the soft decisions
    def via_clf(p):
        _set_param(clf, "fc1.weight", p)
        xs, _ = gen.rollout(clf, s, x1, noise, mode="soft")
        return ad.sum_(ad.tanh(xs[-1]))

    original = clf.fc1.weight
    try:
        assert ad.finite_difference_check(via_clf, original.data.copy()) < 1e-4
    finally:
        clf.fc1.weight = original


def test_mlp_shapes_and_range():
    m = MlpClassifier(6, rng=np.random.default_rng(0))
    p = m(np.array([0.0, 1.0, 1.0]), np.random.default_rng(1).standard_normal((3, 6)))
    assert p.shape == (3, 1)
    assert np.all((p.data > 0) & (p.data < 1))
    assert mlp_forward(m, 1.0, np.zeros(6)).shape == (1, 1)
    with pytest.raises(ShapeError):
        m(np.zeros(3), np.zeros((3, 5)))
    with pytest.raises(ShapeError):
        m(np.zeros(2), np.zeros((3, 6)))


def test_layer_sizes_follow_architecture():
    m = MlpClassifier(6)
    shapes = [p.shape for p in m.parameters()]
    assert shapes == [(7, 32), (32,), (32, 64), (64,), (64, 1), (1,)]


def test_linear_without_rng_is_zero():
    lin = Linear(3, 2)
    assert np.all(lin.weight.data == 0) and np.all(lin.bias.data == 0)


def test_gru_zero_weights_halve_state():
    # all-zero parameters: gates are 0.5 and the candidate is 0, so h' = h / 2
    cell = GruCell(2, 3)
    h = np.array([[1.0, -2.0, 4.0]])
    np.testing.assert_allclose(gru_cell(cell, np.zeros((1, 2)), h).data, h / 2)


def test_gru_shape_errors():
    cell = GruCell(2, 3, rng=np.random.default_rng(0))
    with pytest.raises(ShapeError):
        cell(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))))


def test_generator_horizon_one_returns_x1():
    gen = Generator(2, noise_dim=2, hidden=(3, 3), rng=np.random.default_rng(0))
    clf = MlpClassifier(2, (3, 3), rng=np.random.default_rng(1))
    x1 = np.array([[0.5, -1.0]])
    xs, ys = gen.rollout(clf, np.array([1.0]), x1, np.zeros((1, 0, 2)))
    assert len(xs) == 1 and len(ys) == 1
    np.testing.assert_array_equal(xs[0].data, x1)


def test_generator_rollout_lengths_and_decisions():
    rng = np.random.default_rng(0)
    gen = Generator(3, noise_dim=2, hidden=(4, 4), rng=rng)
    clf = MlpClassifier(3, (3, 3), rng=rng)
    s = np.array([0.0, 1.0, 0.0, 1.0])
    x1 = rng.standard_normal((4, 3))
    noise = rng.standard_normal((4, 5, 2))
    xs, ys = generator_rollout(gen, clf, s, x1, noise, "sampled", np.random.default_rng(5))
    assert len(xs) == 6 and all(x.shape == (4, 3) for x in xs)
    assert all(set(np.unique(y.data)) <= {0.0, 1.0} for y in ys)
    with pytest.raises(ValueError):
        gen.rollout(clf, s, x1, noise, mode="sampled")
    with pytest.raises(ShapeError):
        gen.rollout(clf, s, x1, rng.standard_normal((4, 5, 3)))


def test_generator_ignores_noise_after_requested_horizon():
    rng = np.random.default_rng(0)
    gen = Generator(2, noise_dim=2, hidden=(3, 3), rng=rng)
    clf = MlpClassifier(2, (3, 3), rng=rng)
    s, x1 = np.array([0.0, 1.0]), rng.standard_normal((2, 2))
    noise = rng.standard_normal((2, 4, 2))
    short, _ = gen.rollout(clf, s, x1, noise[:, :2])
    long, _ = gen.rollout(clf, s, x1, noise)
    for a, b in zip(short, long):
        np.testing.assert_array_equal(a.data, b.data)


def test_discriminator_outputs_half_at_initialisation():
    disc = Discriminator(3, (4, 4), rng=np.random.default_rng(0))
    series = np.random.default_rng(1).standard_normal((7, 3))
    np.testing.assert_array_equal(discriminator_forward(disc, series), np.full(7, 0.5))
    with pytest.raises(ShapeError):
        disc([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))])


def test_clone_frozen_and_fingerprint():
    m = _small_mlp(0)
    c = m.clone()
    assert c.fingerprint() == m.fingerprint()
    c.fc1.weight.data[0, 0] += 1.0
    assert c.fingerprint() != m.fingerprint()
    f = m.frozen()
    assert not any(p.requires_grad for p in f.parameters())
    assert all(p.requires_grad for p in m.parameters())
    with pytest.raises(ShapeError):
        m.load_values([np.zeros(1)] * len(m.parameters()))
