"""Infinitesimal jackknife over last-layer parameters, and a brute-force LOO oracle.

The linear-response estimate of a leave-one-out refit is
``theta_i ~= theta_hat + H^{-1} grad_i``. Rows of every matrix here index samples.

The oracle refits a convex softmax regression on frozen features with the last
class as reference (its weight column pinned at zero). That removes the
softmax shift-invariance, so the unregularized Hessian is invertible on
non-separable data and the refit has a unique answer.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from mfuq.curvature import CurvatureSet, SigmaKind, dampen, fisher_last_layer, hessian_last_layer
from mfuq.errors import DimensionMismatch, EmptyBatch, NoConvergence, NonFiniteLoss
from mfuq.linalg import cholesky, solve_spd
from mfuq.model import last_layer, last_layer_grads


class CovKind(str, Enum):
    JACKKNIFE = "jackknife"  # (1/n) H^-1 J H^-1
    BOOTSTRAP = "bootstrap"  # H^-1 J H^-1


@dataclass(frozen=True)
class IjEnsemble:
    theta_hat: np.ndarray
    h_inv_grads: np.ndarray  # (n, p), row i = H^-1 grad_i
    cov_kind: CovKind = CovKind.JACKKNIFE

    @property
    def fitted_mean(self):
        return self.theta_hat

    @property
    def samples(self):
        return self.theta_hat + self.h_inv_grads


def _solve_rows(h_factor, grads):
    grads = np.asarray(grads, dtype=float)
    if grads.ndim != 2 or grads.shape[1] != h_factor.dim:
        raise DimensionMismatch(f"gradients {grads.shape} vs Hessian dim {h_factor.dim}")
    if grads.shape[0] == 0:
        return np.zeros((0, h_factor.dim))
    return solve_spd(h_factor, grads.T).T


def ij_loo(theta_hat, h_factor, grads):
    """Approximate leave-one-out parameters, one row per left-out sample."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_hat.shape != (h_factor.dim,):
        raise DimensionMismatch("theta_hat does not match the Hessian factor")
    return theta_hat + _solve_rows(h_factor, grads)


def ij_ensemble(theta_hat, h_factor, grads, cov_kind=CovKind.JACKKNIFE):
    theta_hat = np.asarray(theta_hat, dtype=float)
    return IjEnsemble(theta_hat, _solve_rows(h_factor, grads), CovKind(cov_kind))


def ij_gaussian(ens):
    """Mean and covariance of the Gaussian fitted to the IJ samples."""
    d = ens.h_inv_grads
    n = d.shape[0]
    cov = d.T @ d
    if ens.cov_kind is CovKind.JACKKNIFE:
        cov = cov / max(n, 1)
    return ens.theta_hat.copy(), 0.5 * (cov + cov.T)


def model_ij_ensemble(m, data, cov_kind=CovKind.JACKKNIFE):
    """IJ ensemble for the last layer of a trained model, using the dampened Hessian."""
    h, _ = dampen(hessian_last_layer(m, data))
    return ij_ensemble(last_layer(m).ravel(), cholesky(h), last_layer_grads(m, data), cov_kind)


def ij_curvature(m, data, cov_kind=CovKind.JACKKNIFE):
    """CurvatureSet whose Sigma is the fitted IJ covariance (sandwich path)."""
    h_raw = hessian_last_layer(m, data)
    h, eps = dampen(h_raw)
    ens = ij_ensemble(last_layer(m).ravel(), cholesky(h), last_layer_grads(m, data), cov_kind)
    _, cov = ij_gaussian(ens)
    return CurvatureSet(h_raw, fisher_last_layer(m, data), cov, SigmaKind.SANDWICH, eps, m.fingerprint())


# --- reference-class softmax regression (the convex oracle) ---------------


def _ref_logits(theta, x, k):
    w = theta.reshape(x.shape[1], k - 1)
    return np.concatenate([x @ w, np.zeros((x.shape[0], 1))], axis=1)


def _probs(theta, x, k):
    a = _ref_logits(theta, x, k)
    return np.exp(a - logsumexp(a, axis=1, keepdims=True))


def logreg_loss(theta, x, y, k, weight_decay=0.0):
    a = _ref_logits(theta, x, k)
    nll = np.sum(logsumexp(a, axis=1) - a[np.arange(len(y)), y])
    return float(nll + 0.5 * weight_decay * theta @ theta)


def logreg_grads(theta, x, y, k):
    """Per-sample gradients x (outer) (p - onehot)[:K-1], rows flattened feature-major."""
    r = _probs(theta, x, k)
    r[np.arange(len(y)), y] -= 1.0
    return (x[:, :, None] * r[:, None, :-1]).reshape(len(y), -1)


def logreg_hessian(theta, x, y, k, weight_decay=0.0):
    p = _probs(theta, x, k)[:, :-1]
    d = x.shape[1]
    h = np.zeros((d, k - 1, d, k - 1))
    for c in range(k - 1):
        h[:, c, :, c] = (x * p[:, c:c + 1]).T @ x
    xp = (x[:, :, None] * p[:, None, :]).reshape(len(y), -1)
    h = h.reshape(d * (k - 1), -1) - xp.T @ xp
    h = 0.5 * (h + h.T)
    return h + weight_decay * np.eye(h.shape[0])


def logreg_fit(x, y, k, weight_decay=0.0, tol=1e-11, max_iter=200):
    """Damped Newton to a gradient norm below ``tol * max(1, n)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    theta = np.zeros(x.shape[1] * (k - 1))
    f = logreg_loss(theta, x, y, k, weight_decay)
    for _ in range(max_iter):
        grad = logreg_grads(theta, x, y, k).sum(axis=0) + weight_decay * theta
        if np.linalg.norm(grad) <= tol * max(1, len(y)):
            return theta
        h = logreg_hessian(theta, x, y, k, weight_decay)
        step = np.linalg.solve(h, grad)
        t = 1.0
        while True:
            cand = theta - t * step
            fc = logreg_loss(cand, x, y, k, weight_decay)
            if fc <= f - 1e-4 * t * (grad @ step) + 1e-12 * abs(f) or t < 1e-10:
                break
            t *= 0.5
        if not np.isfinite(fc):
            raise NonFiniteLoss(0, "non-finite loss during Newton refit")
        theta, f = cand, fc
    raise NoConvergence("Newton refit did not converge (separable data?)")


def brute_force_loo(data, cfg, n_classes=None, fit=None, max_n=200):
    """Refit once per left-out sample; returns an ``(n, p)`` array of parameters.

    ``fit(batch, cfg)`` defaults to the reference-class softmax regression with
    ``cfg.weight_decay``; every refit starts from the same (zero) initialization.
    """
    n = len(data)
    if n > max_n:
        raise ValueError(f"brute-force LOO is guarded to n <= {max_n}")
    if n <= 1:
        raise EmptyBatch("leaving one out would leave no training data")
    k = n_classes or int(data.labels.max()) + 1
    if fit is None:
        def fit(batch, cfg):
            return logreg_fit(batch.inputs, batch.labels, k, cfg.weight_decay)
    keep = np.ones(n, dtype=bool)
    out = []
    for i in range(n):
        keep[i] = False
        out.append(np.asarray(fit(data.subset(keep), cfg), dtype=float))
        keep[i] = True
    return np.vstack(out)


def logreg_ij(data, n_classes=None, weight_decay=0.0):
    """Full fit plus the IJ ensemble for the reference-class regression.

    Returns ``(theta_hat, ensemble, dampening_eps)``.
    """
    k = n_classes or int(data.labels.max()) + 1
    theta = logreg_fit(data.inputs, data.labels, k, weight_decay)
    h, eps = dampen(logreg_hessian(theta, data.inputs, data.labels, k, weight_decay))
    grads = logreg_grads(theta, data.inputs, data.labels, k)
    return theta, ij_ensemble(theta, cholesky(h), grads), eps
