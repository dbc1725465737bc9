import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import logistic_problem
from mfuq.curvature import SigmaKind, dampen, fisher_last_layer, hessian_last_layer
from mfuq.errors import DimensionMismatch, EmptyBatch
from mfuq.jackknife import (
    CovKind,
    brute_force_loo,
    ij_curvature,
    ij_ensemble,
    ij_gaussian,
    ij_loo,
    logreg_fit,
    logreg_grads,
    logreg_hessian,
    logreg_ij,
    logreg_loss,
    model_ij_ensemble,
)
from mfuq.linalg import cholesky, invert_spd
from mfuq.model import LabeledBatch, TrainConfig, last_layer


def mean_fit(batch, cfg):
    # minimizer of sum (theta - z_i)^2 / 2
    return batch.inputs.mean(axis=0)


Z = LabeledBatch(np.array([[0.0], [2.0]]), np.zeros(2, dtype=int))


def test_scalar_quadratic_ij():
    theta_hat = np.array([1.0])
    grads = theta_hat - Z.inputs  # d/dtheta of (theta - z)^2 / 2
    f = cholesky(np.array([[2.0]]))
    out = ij_loo(theta_hat, f, grads)
    np.testing.assert_allclose(out[:, 0], [1.5, 0.5], rtol=0, atol=1e-15)
    exact = brute_force_loo(Z, TrainConfig(), fit=mean_fit)
    np.testing.assert_array_equal(exact[:, 0], [2.0, 0.0])


def test_scalar_quadratic_gaussian():
    ens = ij_ensemble([1.0], cholesky(np.array([[2.0]])), np.array([[1.0], [-1.0]]))
    mean, cov = ij_gaussian(ens)
    assert mean[0] == 1.0
    assert cov[0, 0] == pytest.approx(0.25, abs=1e-15)
    assert np.var(ens.samples[:, 0]) == pytest.approx(0.25, abs=1e-15)
    boot = ij_ensemble([1.0], cholesky(np.array([[2.0]])), np.array([[1.0], [-1.0]]), CovKind.BOOTSTRAP)
    assert ij_gaussian(boot)[1][0, 0] == pytest.approx(0.5, abs=1e-15)


def test_zero_gradients():
    f = cholesky(np.diag([2.0, 3.0]))
    out = ij_loo([1.0, -1.0], f, np.zeros((4, 2)))
    np.testing.assert_array_equal(out, np.tile([1.0, -1.0], (4, 1)))
    _, cov = ij_gaussian(ij_ensemble([1.0, -1.0], f, np.zeros((4, 2))))
    np.testing.assert_array_equal(cov, np.zeros((2, 2)))


def test_dimension_mismatch():
    f = cholesky(np.eye(2))
    with pytest.raises(DimensionMismatch):
        ij_loo([0.0, 0.0], f, np.zeros((3, 3)))
    with pytest.raises(DimensionMismatch):
        ij_loo([0.0], f, np.zeros((3, 2)))


def test_brute_force_guards():
    with pytest.raises(EmptyBatch):
        brute_force_loo(LabeledBatch(np.ones((1, 2)), [0]), TrainConfig())
    x, y = logistic_problem(0, n=201)
    with pytest.raises(ValueError):
        brute_force_loo(LabeledBatch(x, y), TrainConfig())


def test_logreg_derivatives_fd():
    x, y = logistic_problem(1, n=20)
    x3 = x
    y3 = np.random.default_rng(1).integers(0, 3, 20)
    theta = np.random.default_rng(2).normal(size=x3.shape[1] * 2)
    g = logreg_grads(theta, x3, y3, 3).sum(axis=0)
    h = logreg_hessian(theta, x3, y3, 3)
    eps = 1e-5
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = eps
        fd = (logreg_loss(theta + e, x3, y3, 3) - logreg_loss(theta - e, x3, y3, 3)) / (2 * eps)
        assert fd == pytest.approx(g[i], rel=1e-6, abs=1e-8)
        gd = (logreg_grads(theta + e, x3, y3, 3).sum(0) - logreg_grads(theta - e, x3, y3, 3).sum(0)) / (2 * eps)
        np.testing.assert_allclose(gd, h[:, i], rtol=1e-5, atol=1e-7)


def test_logreg_fit_stationary():
    x, y = logistic_problem(3)
    theta = logreg_fit(x, y, 2)
    assert np.linalg.norm(logreg_grads(theta, x, y, 2).sum(axis=0)) <= 1e-9


def test_duplicated_points_move_less():
    x, y = logistic_problem(4, n=30)
    once = LabeledBatch(x, y)
    twice = LabeledBatch(np.vstack([x, x]), np.concatenate([y, y]))
    theta = logreg_fit(x, y, 2)
    d_once = np.linalg.norm(brute_force_loo(once, TrainConfig(), 2) - theta, axis=1)
    d_twice = np.linalg.norm(brute_force_loo(twice, TrainConfig(), 2)[:30] - theta, axis=1)
    assert np.all(d_twice < d_once)


@pytest.mark.parametrize("seed", range(3))
def test_ij_tracks_brute_force(seed):
    data = LabeledBatch(*logistic_problem(seed))
    theta, ens, eps = logreg_ij(data, 2)
    assert eps == 0.0
    ij = ens.h_inv_grads
    bf = brute_force_loo(data, TrainConfig(), 2) - theta
    rel = np.linalg.norm(ij - bf, axis=1) / np.linalg.norm(bf, axis=1)
    assert np.median(rel) <= 0.15
    assert np.mean(np.sign(ij) == np.sign(bf)) >= 0.95
    for j in range(ij.shape[1]):
        assert np.corrcoef(ij[:, j], bf[:, j])[0, 1] >= 0.99


@pytest.mark.parametrize("seed", range(5))
def test_covariance_identity(seed):
    data = LabeledBatch(*logistic_problem(seed))
    theta, ens, _ = logreg_ij(data, 2)
    h, _ = dampen(logreg_hessian(theta, data.inputs, data.labels, 2))
    grads = logreg_grads(theta, data.inputs, data.labels, 2)
    hinv = invert_spd(h)
    expected = hinv @ (grads.T @ grads) @ hinv / len(data)
    emp = np.cov(ens.samples, rowvar=False, bias=True)
    np.testing.assert_allclose(emp, expected, atol=1e-8)
    np.testing.assert_allclose(ens.samples.mean(axis=0), theta, atol=1e-8 * max(1.0, np.linalg.norm(theta)))


def test_model_ensemble_matches_curvature(toy_problem):
    model, sp, _ = toy_problem
    ens = model_ij_ensemble(model, sp.train)
    np.testing.assert_array_equal(ens.theta_hat, last_layer(model).ravel())
    curv = ij_curvature(model, sp.train)
    h, _ = dampen(hessian_last_layer(model, sp.train))
    hinv = invert_spd(h)
    ref = hinv @ fisher_last_layer(model, sp.train) @ hinv / len(sp.train)
    np.testing.assert_allclose(curv.sigma, ref, rtol=1e-8, atol=1e-12)
    assert curv.sigma_kind is SigmaKind.SANDWICH


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 30), p=st.integers(1, 6), seed=st.integers(0, 2**31 - 1))
def test_bootstrap_is_n_times_jackknife(n, p, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(p, p + 2))
    f = cholesky(a @ a.T + np.eye(p))
    grads = rng.normal(size=(n, p))
    jack = ij_gaussian(ij_ensemble(np.zeros(p), f, grads))[1]
    boot = ij_gaussian(ij_ensemble(np.zeros(p), f, grads, CovKind.BOOTSTRAP))[1]
    np.testing.assert_allclose(boot, n * jack, rtol=1e-12, atol=1e-15)
