"""Dense symmetric linear algebra: Cholesky, SPD solves, eigenvalue extremes, MVN draws.

Thin layer over numpy/scipy LAPACK bindings that adds the pivot-tolerance and
symmetry checks the rest of the package relies on. All functions accept stacked
matrices of shape ``(..., n, n)`` unless noted otherwise.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from mfuq.errors import DimensionMismatch, NoConvergence, NotPositiveDefinite

PIVOT_RTOL = 1e-12


def sym_matrix(m, atol=1e-10):
    """Validate and return ``m`` as an exactly symmetric float array."""
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimensionMismatch(f"expected square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    mt = np.swapaxes(m, -1, -2)
    scale = max(1.0, float(np.max(np.abs(m), initial=0.0)))
    if np.max(np.abs(m - mt), initial=0.0) > atol * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (m + mt)


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray

    @property
    def dim(self):
        return self.lower.shape[-1]

    def reconstruct(self):
        return self.lower @ np.swapaxes(self.lower, -1, -2)


def cholesky(m):
    """Lower Cholesky factor; pivots <= 1e-12 * max diagonal count as failure."""
    m = sym_matrix(m)
    try:
        lower = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    diag = np.diagonal(m, axis1=-2, axis2=-1)
    pivots = np.diagonal(lower, axis1=-2, axis2=-1) ** 2
    tol = PIVOT_RTOL * np.max(diag, axis=-1, keepdims=True)
    if not np.all(np.isfinite(lower)) or np.any(pivots <= tol):
        raise NotPositiveDefinite("pivot below tolerance")
    return CholeskyFactor(lower)


def psd_cholesky(m, jitter=1e-12, max_tries=8):
    """Cholesky of a PSD matrix, adding ``jitter * scale * I`` (escalating x10) on failure."""
    m = sym_matrix(m)
    try:
        return cholesky(m)
    except NotPositiveDefinite:
        pass
    n = m.shape[-1]
    scale = np.maximum(1.0, np.max(np.diagonal(m, axis1=-2, axis2=-1), axis=-1))
    eye = np.eye(n)
    for attempt in range(max_tries):
        bump = (jitter * 10.0**attempt) * scale
        try:
            return cholesky(m + bump[..., None, None] * eye)
        except NotPositiveDefinite:
            continue
    raise NotPositiveDefinite("matrix not PSD even after jitter")


def solve_spd(f, b):
    """Solve (L L^T) x = b by forward then backward substitution."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.dim:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, factor has dim {f.dim}")
    y = solve_triangular(f.lower, b, lower=True)
    return solve_triangular(f.lower.T, y, lower=False)


def invert_spd(m):
    f = cholesky(m)
    inv = solve_spd(f, np.eye(f.dim))
    return 0.5 * (inv + inv.T)


def eig_extremes(m):
    """(smallest, largest) eigenvalue via a full symmetric eigensolve."""
    m = sym_matrix(m)
    try:
        w = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from None
    return float(w[0]), float(w[-1])


def sample_mvn(mean, f, rng, size=None):
    """Draw ``mean + L z`` with z standard normal from ``rng``.

    ``size=None`` returns a single vector, otherwise an array of shape ``(size, dim)``.
    """
    mean = np.asarray(mean, dtype=float)
    if mean.shape[-1] != f.dim:
        raise DimensionMismatch(f"mean has length {mean.shape[-1]}, factor has dim {f.dim}")
    if size is None:
        return mean + f.lower @ rng.standard_normal(f.dim)
    z = rng.standard_normal((size, f.dim))
    return mean + z @ f.lower.T
