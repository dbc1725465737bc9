"""Gaussian-softmax integral: mean-field closed forms and sampling-based references.

Everything here computes (approximations to) E[softmax(a)] for a ~ N(mu, S).
Arrays may carry leading batch dimensions: ``mu`` is ``(..., K)`` and ``cov`` is
``(..., K, K)``.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit, logsumexp

from mfuq.errors import (
    DimensionMismatch,
    NegativeDifferenceVariance,
    NegativeVariance,
    NotPositiveDefinite,
    ZeroMass,
)
from mfuq.linalg import psd_cholesky

LAMBDA0_PROBIT = 3.0 / math.pi**2
LAMBDA0_BISHOP = math.pi / 8.0
DIFF_VAR_TOL = 1e-10


class Scheme(str, Enum):
    MF0 = "mf0"
    MF1 = "mf1"
    MF2 = "mf2"


@dataclass(frozen=True)
class MfConfig:
    lambda0: float = LAMBDA0_PROBIT
    scheme: Scheme = Scheme.MF0

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    @classmethod
    def probit(cls, scheme=Scheme.MF0):
        return cls(LAMBDA0_PROBIT, scheme)

    @classmethod
    def bishop(cls, scheme=Scheme.MF0):
        return cls(LAMBDA0_BISHOP, scheme)


@dataclass(frozen=True)
class UkfConfig:
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class GaussianActivation:
    """Mean and covariance of the pre-softmax logits, optionally batched."""

    mu: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        k = mu.shape[-1] if mu.ndim else 0
        if k < 2:
            raise DimensionMismatch("need at least two classes")
        if cov.shape != mu.shape + (k,):
            raise DimensionMismatch(f"cov shape {cov.shape} does not match mu shape {mu.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise ValueError("non-finite entries in Gaussian activation")
        cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
        eig = np.linalg.eigvalsh(cov)
        floor = -1e-8 * np.maximum(1.0, eig[..., -1])
        if np.any(eig[..., 0] < floor):
            raise NotPositiveDefinite("logit covariance is not positive semi-definite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "cov", cov)

    @property
    def n_classes(self):
        return self.mu.shape[-1]

    @property
    def batch_shape(self):
        return self.mu.shape[:-1]

    def scaled(self, t_ens=1.0, t_act=1.0):
        """Apply ensemble/activation temperatures: mu / t_act, cov / (t_ens * t_act^2)."""
        return GaussianActivation(self.mu / t_act, self.cov / (t_ens * t_act**2))

    def __getitem__(self, idx):
        return GaussianActivation(self.mu[idx], self.cov[idx])


def softmax(logits):
    logits = np.asarray(logits, dtype=float)
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def probit_sigmoid(mu, var, lambda0=LAMBDA0_PROBIT):
    """sigmoid(mu / sqrt(1 + lambda0 var)), the Gaussian-sigmoid approximation."""
    var = np.asarray(var, dtype=float)
    if np.any(var < 0):
        raise NegativeVariance("variance must be non-negative")
    out = expit(np.asarray(mu, dtype=float) / np.sqrt(1.0 + lambda0 * var))
    return float(out) if np.ndim(out) == 0 else out


def _pairwise(mu, scale):
    # e_k = 1 / sum_i exp(-(mu_k - mu_i) / scale_ki); the i == k term is exp(0) = 1.
    diff = mu[..., :, None] - mu[..., None, :]
    return np.exp(-logsumexp(-diff / scale, axis=-1))


def mf0(g, lambda0=LAMBDA0_PROBIT):
    """Unnormalized mf0: softmax_k(mu / sqrt(1 + lambda0 s_k^2)) for each k."""
    var = np.diagonal(g.cov, axis1=-2, axis2=-1)
    scale = np.sqrt(1.0 + lambda0 * var)[..., :, None]
    return _pairwise(g.mu, scale)


def mf1(g, lambda0=LAMBDA0_PROBIT):
    var = np.diagonal(g.cov, axis1=-2, axis2=-1)
    scale = np.sqrt(1.0 + lambda0 * (var[..., :, None] + var[..., None, :]))
    return _pairwise(g.mu, scale)


def mf2(g, lambda0=LAMBDA0_PROBIT):
    var = np.diagonal(g.cov, axis1=-2, axis2=-1)
    dvar = var[..., :, None] + var[..., None, :] - 2.0 * g.cov
    if np.any(dvar < -DIFF_VAR_TOL):
        raise NegativeDifferenceVariance(f"difference variance {dvar.min():.3g} < 0")
    scale = np.sqrt(1.0 + lambda0 * np.maximum(dvar, 0.0))
    return _pairwise(g.mu, scale)


_SCHEMES = {Scheme.MF0: mf0, Scheme.MF1: mf1, Scheme.MF2: mf2}


def renormalize(e_tilde):
    e_tilde = np.asarray(e_tilde, dtype=float)
    if np.any(e_tilde < 0):
        raise ValueError("renormalize expects non-negative entries")
    total = np.sum(e_tilde, axis=-1, keepdims=True)
    if np.any(total <= 1e-300):
        raise ZeroMass("probability mass vanished")
    return e_tilde / total


def mean_field(g, cfg=MfConfig()):
    """Renormalized mean-field probabilities for the configured scheme."""
    return renormalize(_SCHEMES[cfg.scheme](g, cfg.lambda0))


def _mc_single(mu, cov, n_samples, rng, chunk):
    lower = psd_cholesky(cov).lower
    k = mu.shape[0]
    s1 = np.zeros(k)
    s2 = np.zeros(k)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        a = mu + rng.standard_normal((m, k)) @ lower.T
        p = softmax(a)
        s1 += p.sum(axis=0)
        s2 += (p * p).sum(axis=0)
        done += m
    mean = s1 / n_samples
    var = np.maximum(s2 / n_samples - mean**2, 0.0)
    return mean, np.sqrt(var / n_samples)


def mc_integral(g, n_samples, rng, chunk=100_000, return_stderr=False):
    """Monte Carlo average of softmax over draws a ~ N(mu, S).

    One Cholesky per activation, reused across all draws. With
    ``return_stderr`` also returns the per-class standard error of the mean.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mu = g.mu.reshape(-1, g.n_classes)
    cov = g.cov.reshape(-1, g.n_classes, g.n_classes)
    means = np.empty_like(mu)
    errs = np.empty_like(mu)
    for j in range(mu.shape[0]):
        means[j], errs[j] = _mc_single(mu[j], cov[j], n_samples, rng, chunk)
    means = means.reshape(g.mu.shape)
    if return_stderr:
        return means, errs.reshape(g.mu.shape)
    return means


def ukf_weights(k, alpha=0.5):
    """Weights for the 2K+1 sigma points: centre first, then +/- columns."""
    w = np.full(2 * k + 1, 1.0 / (2.0 * (1.0 - alpha) * k))
    w[0] = -alpha / (1.0 - alpha)
    return w


def sigma_points(g, alpha=0.5):
    """Sigma points of shape ``(..., 2K+1, K)`` using the Cholesky factor of S."""
    k = g.n_classes
    lower = psd_cholesky(g.cov).lower
    cols = np.swapaxes(lower, -1, -2) * math.sqrt((1.0 - alpha) * k)
    mu = g.mu[..., None, :]
    return np.concatenate([mu, mu + cols, mu - cols], axis=-2)


def ukf_integral(g, cfg=UkfConfig()):
    pts = sigma_points(g, cfg.alpha)
    w = ukf_weights(g.n_classes, cfg.alpha)
    raw = np.einsum("i,...ik->...k", w, softmax(pts))
    return renormalize(np.maximum(raw, 0.0))
