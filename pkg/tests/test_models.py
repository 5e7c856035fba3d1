import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poelr.data import gen_blobs, gen_regression
from poelr.exceptions import InvalidInput
from poelr.models import (Batch, ModelSpec, accuracy, analytic_smoothness, finite_diff_grad, forward,
                          init_params, input_grad, loss, loss_and_grad, predict, unpack)
from poelr.optim import Schedule, TrainConfig, train


def test_layout_lengths():
    assert ModelSpec((2, 3)).n_params == 9
    assert ModelSpec((784, 16, 10)).n_params == 12730
    assert ModelSpec((4, 3), bias=False).n_params == 12


def test_init_deterministic():
    spec = ModelSpec((5, 7, 3), seed=11)
    np.testing.assert_array_equal(init_params(spec), init_params(spec))
    assert not np.array_equal(init_params(spec), init_params(spec, seed=12))


def test_unpack_rejects_wrong_length():
    with pytest.raises(InvalidInput):
        unpack(ModelSpec((2, 3)), np.zeros(8))


def test_zero_theta_uniform_logits():
    spec = ModelSpec((6, 10))
    x = np.random.default_rng(0).uniform(size=(4, 6))
    assert loss(spec, np.zeros(spec.n_params), Batch(x, np.arange(4))) == pytest.approx(math.log(10), abs=1e-12)
    # ties go to class 0
    np.testing.assert_array_equal(predict(spec, np.zeros(spec.n_params), x), 0)


def test_linear_regression_interpolates():
    ds = gen_regression(50, 3, noise=0.0, seed=1)
    spec = ModelSpec((3, 1), "identity", "mse")
    sol, *_ = np.linalg.lstsq(np.hstack([ds.inputs, np.ones((50, 1))]), ds.targets, rcond=None)
    theta = np.concatenate([sol[:-1].ravel(), sol[-1]])
    val, g = loss_and_grad(spec, theta, ds.batch())
    assert val < 1e-20
    np.testing.assert_allclose(g, 0.0, atol=1e-10)


def test_direct_linear_prediction():
    spec = ModelSpec((2, 2), "identity", "mse")
    theta = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    assert predict(spec, theta, np.array([3.0, -1.0]))[0] == 0


def _instance(activation, seed, loss_kind="softmax_ce"):
    rng = np.random.default_rng(seed)
    widths = (int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 5)))
    spec = ModelSpec(widths, activation, loss_kind, seed)
    theta = rng.standard_normal(spec.n_params)
    x = rng.uniform(size=(7, widths[0]))
    y = rng.integers(0, widths[-1], size=7)
    return spec, theta, Batch(x, y)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


@pytest.mark.parametrize("activation", ["tanh", "identity"])
@pytest.mark.parametrize("loss_kind", ["softmax_ce", "mse"])
def test_gradient_matches_central_differences(activation, loss_kind):
    for seed in range(20):
        spec, theta, batch = _instance(activation, seed, loss_kind)
        _, g = loss_and_grad(spec, theta, batch)
        assert _rel(g, finite_diff_grad(spec, theta, batch)) <= 1e-5


def test_quadratic_model_exact_differences():
    ds = gen_regression(30, 4, noise=0.3, seed=2)
    spec = ModelSpec((4, 1), "identity", "mse")
    theta = np.random.default_rng(3).standard_normal(spec.n_params)
    _, g = loss_and_grad(spec, theta, ds.batch())
    np.testing.assert_allclose(finite_diff_grad(spec, theta, ds.batch(), h=1e-4), g, atol=1e-9)


def test_zero_inputs_kill_weight_gradient():
    spec = ModelSpec((3, 4))
    theta = np.random.default_rng(0).standard_normal(spec.n_params)
    g = finite_diff_grad(spec, theta, Batch(np.zeros((5, 3)), np.arange(5) % 4), h=1e-4)
    np.testing.assert_allclose(g[:12], 0.0, atol=1e-12)


def test_hidden_permutation_permutes_gradient():
    spec = ModelSpec((3, 4, 2), "tanh", "softmax_ce")
    rng = np.random.default_rng(5)
    theta = rng.standard_normal(spec.n_params)
    batch = Batch(rng.uniform(size=(6, 3)), rng.integers(0, 2, size=6))
    perm = np.array([2, 0, 3, 1])

    def permute(t):
        (w1, b1), (w2, b2) = unpack(spec, t)
        return np.concatenate([w1[:, perm].ravel(), b1[perm], w2[perm].ravel(), b2])

    _, g = loss_and_grad(spec, theta, batch)
    _, gp = loss_and_grad(spec, permute(theta), batch)
    np.testing.assert_allclose(gp, permute(g), atol=1e-14)


def test_relu_gradient_off_kink():
    for seed in range(20):
        spec, theta, batch = _instance("relu", seed)
        pre = batch.inputs @ unpack(spec, theta)[0][0] + unpack(spec, theta)[0][1]
        if np.min(np.abs(pre)) < 1e-3:
            continue
        _, g = loss_and_grad(spec, theta, batch)
        assert _rel(g, finite_diff_grad(spec, theta, batch)) <= 1e-4


def test_input_grad_matches_differences():
    spec, theta, batch = _instance("tanh", 4)
    _, gx = input_grad(spec, theta, batch.inputs, batch.labels)
    h = 1e-6
    for i, j in [(0, 0), (3, 1), (6, 0)]:
        x = batch.inputs.copy()
        x[i, j] += h
        up = loss(spec, theta, Batch(x, batch.labels))
        x[i, j] -= 2 * h
        down = loss(spec, theta, Batch(x, batch.labels))
        # input_grad is per example, loss is a batch mean
        assert gx[i, j] == pytest.approx(len(x) * (up - down) / (2 * h), rel=1e-6, abs=1e-9)


def test_dimension_mismatch():
    spec = ModelSpec((3, 2))
    with pytest.raises(InvalidInput):
        forward(spec, np.zeros(spec.n_params), np.zeros((2, 4)))


def test_blobs_model_trains():
    ds = gen_blobs(300, 2, 4, 0.05, 0)
    spec = ModelSpec((2, 16, 4), "tanh", "softmax_ce", 0)
    res = train(spec, ds, Schedule("constant", 0.5), TrainConfig(epochs=40, batch_size=20))
    assert accuracy(spec, res.final, ds.inputs, ds.labels) >= 0.95


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.floats(0.1, 50.0), st.integers(0, 1000))
def test_analytic_smoothness_is_hessian_norm(dim, L, seed):
    from poelr.data import gen_quadratic

    ds = gen_quadratic(max(dim, 8), dim, L, seed=seed)
    spec = ModelSpec((dim, 1), "identity", "mse", bias=False)
    assert analytic_smoothness(spec, ds.inputs) == pytest.approx(L, rel=1e-10)
