"""Last-layer curvature: exact softmax-NLL Hessian, observed Fisher, dampening, Sigma.

All matrices are over the flattened augmented last layer (see ``mfuq.model``),
so their dimension is ``feature_dim * n_classes``.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from mfuq.errors import EmptyBatch, NotPositiveDefinite, StaleCurvature
from mfuq.gsint import softmax
from mfuq.linalg import cholesky, eig_extremes, solve_spd, sym_matrix
from mfuq.model import features, last_layer, last_layer_grads
from mfuq.store import read_npz, write_npz

CHUNK = 2048


class SigmaKind(str, Enum):
    H_INV = "hinv"
    J_INV = "jinv"
    SANDWICH = "sandwich"


@dataclass(frozen=True)
class CurvatureSet:
    hessian: np.ndarray
    fisher: np.ndarray
    sigma: np.ndarray
    sigma_kind: SigmaKind
    epsilon: float
    model_hash: str = ""

    def check_model(self, m):
        if self.model_hash and self.model_hash != m.fingerprint():
            raise StaleCurvature("curvature was built for a different checkpoint")


def _subsample(data, subsample, seed):
    if subsample is None or subsample >= len(data):
        return data
    idx = np.sort(np.random.default_rng(seed).choice(len(data), subsample, replace=False))
    return data.subset(idx)


def fisher_last_layer(m, data):
    """J = sum_i grad_i grad_i^T over per-sample last-layer gradients."""
    if len(data) == 0:
        raise EmptyBatch("no samples to accumulate")
    p = m.feature_dim * m.n_classes
    out = np.zeros((p, p))
    for start in range(0, len(data), CHUNK):
        grads = last_layer_grads(m, data.subset(slice(start, start + CHUNK)))
        out += grads.T @ grads
    return 0.5 * (out + out.T)


def hessian_last_layer(m, data):
    """Exact NLL Hessian w.r.t. the flattened last layer.

    Per sample the block is (g g^T) kron (diag(p) - p p^T) in feature-major
    order. Assembled as a block-diagonal term minus a Gram matrix of g kron p.
    """
    if len(data) == 0:
        raise EmptyBatch("no samples to accumulate")
    d, k = m.feature_dim, m.n_classes
    out = np.zeros((d, k, d, k))
    gram = np.zeros((d * k, d * k))
    w = last_layer(m)
    for start in range(0, len(data), CHUNK):
        g = features(m, data.inputs[start:start + CHUNK])
        p = softmax(g @ w)
        for c in range(k):
            out[:, c, :, c] += (g * p[:, c:c + 1]).T @ g
        gp = (g[:, :, None] * p[:, None, :]).reshape(g.shape[0], -1)
        gram += gp.T @ gp
    h = out.reshape(d * k, d * k) - gram
    return 0.5 * (h + h.T)


def dampen(m):
    """Add eps * I so the smallest eigenvalue is at least 1. Returns ``(m + eps I, eps)``."""
    m = sym_matrix(m)
    lo, _ = eig_extremes(m)
    eps = max(0.0, 1.0 - lo)
    return m + eps * np.eye(m.shape[0]), eps


def build_sigma(h, j, kind, return_epsilon=False):
    """Sigma for the parameter Gaussian: inverse of dampened H or J, or the sandwich.

    Only the matrix being inverted is dampened (J stays raw inside the sandwich).
    """
    kind = SigmaKind(kind)
    source = j if kind is SigmaKind.J_INV else h
    damped, eps = dampen(source)
    f = cholesky(damped)
    inv = solve_spd(f, np.eye(f.dim))
    inv = 0.5 * (inv + inv.T)
    sigma = inv @ sym_matrix(j) @ inv if kind is SigmaKind.SANDWICH else inv
    sigma = 0.5 * (sigma + sigma.T)
    if kind is not SigmaKind.SANDWICH:
        cholesky(sigma)
    else:
        lo, hi = eig_extremes(sigma)
        if lo < -1e-10 * max(1.0, hi):
            raise NotPositiveDefinite("sandwich covariance is indefinite")
    return (sigma, eps) if return_epsilon else sigma


def build_curvature(m, data, kind=SigmaKind.H_INV, subsample=None, seed=0):
    """Hessian, Fisher and selected Sigma for model ``m`` on ``data``.

    ``subsample`` accumulates over a random subset of that many samples.
    """
    data = _subsample(data, subsample, seed)
    h = hessian_last_layer(m, data)
    j = fisher_last_layer(m, data)
    sigma, eps = build_sigma(h, j, kind, return_epsilon=True)
    return CurvatureSet(h, j, sigma, SigmaKind(kind), eps, m.fingerprint())


def save_curvature(path, curv, meta=None):
    info = {
        "kind": "curvature-cache",
        "sigma_kind": curv.sigma_kind.value,
        "epsilon": curv.epsilon,
        "model_hash": curv.model_hash,
    }
    info.update(meta or {})
    write_npz(path, {"hessian": curv.hessian, "fisher": curv.fisher, "sigma": curv.sigma}, info)


def load_curvature(path):
    arrays, meta = read_npz(path)
    curv = CurvatureSet(
        arrays["hessian"],
        arrays["fisher"],
        arrays["sigma"],
        SigmaKind(meta["sigma_kind"]),
        float(meta["epsilon"]),
        meta.get("model_hash", ""),
    )
    return curv, meta
