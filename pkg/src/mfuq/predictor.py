"""From a test input to calibrated class probabilities.

The logits are linear in the last layer, so under theta ~ N(theta_hat, Sigma / T_ens)
they are exactly Gaussian with mean ``g^T W / T_act`` and covariance
``J Sigma J^T / (T_ens T_act^2)``, where J is the Kronecker-structured logit
Jacobian. ``S`` is assembled by contracting feature vectors against Sigma
viewed as a (D, K, D, K) tensor, without ever forming J.
"""

import csv
import zlib
from dataclasses import dataclass, field

import numpy as np

from mfuq.errors import ConfigError, DimensionMismatch
from mfuq.gsint import (
    LAMBDA0_PROBIT,
    GaussianActivation,
    MfConfig,
    Scheme,
    UkfConfig,
    mc_integral,
    mean_field,
    softmax,
    ukf_integral,
)
from mfuq.model import features, last_layer

INTEGRATORS = ("mf0", "mf1", "mf2", "mc", "ukf", "point")
CHUNK = 256


@dataclass(frozen=True)
class TemperatureConfig:
    t_ens: float = 1.0
    t_act: float = 1.0

    def __post_init__(self):
        for name in ("t_ens", "t_act"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be finite and positive, got {v}")


@dataclass(frozen=True)
class PredictorConfig:
    integrator: str = "mf0"
    temps: TemperatureConfig = field(default_factory=TemperatureConfig)
    lambda0: float = LAMBDA0_PROBIT
    mc_samples: int = 1000
    seed: int = 0
    ukf_alpha: float = 0.5

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"unknown integrator {self.integrator!r}; choose from {INTEGRATORS}")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")
        if not self.lambda0 > 0:
            raise ConfigError("lambda0 must be positive")
        UkfConfig(self.ukf_alpha)

    def describe(self):
        return {
            "integrator": self.integrator,
            "t_ens": self.temps.t_ens,
            "t_act": self.temps.t_act,
            "lambda0": self.lambda0,
            "mc_samples": self.mc_samples,
            "seed": self.seed,
            "ukf_alpha": self.ukf_alpha,
        }


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    predicted_class: int
    ood_score: float
    logit_gaussian: GaussianActivation | None = None


def _logit_cov(g, sigma, k):
    d = g.shape[-1]
    if sigma.shape != (d * k, d * k):
        raise DimensionMismatch(f"Sigma {sigma.shape} does not match features {d} x classes {k}")
    s4 = sigma.reshape(d, k * d * k)
    out = np.empty((g.shape[0], k, k))
    for start in range(0, g.shape[0], CHUNK):
        gc = g[start:start + CHUNK]
        tmp = (gc @ s4).reshape(-1, k, d, k)
        out[start:start + CHUNK] = np.einsum("nkhl,nh->nkl", tmp, gc)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def logit_gaussian(m, curv, temps, x):
    """GaussianActivation for one input (1-D ``x``) or a batch (2-D ``x``)."""
    curv.check_model(m)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    g = features(m, np.atleast_2d(x))
    mu = g @ last_layer(m)
    cov = _logit_cov(g, curv.sigma, m.n_classes)
    ga = GaussianActivation(mu, cov).scaled(temps.t_ens, temps.t_act)
    return ga[0] if single else ga


def _row_seed(seed, mu, cov):
    return np.random.SeedSequence([seed, zlib.crc32(mu.tobytes()), zlib.crc32(cov.tobytes())])


def integrate(g, cfg):
    """Probabilities for a (batched) GaussianActivation under the configured integrator."""
    if cfg.integrator == "point":
        return softmax(g.mu)
    if cfg.integrator in ("mf0", "mf1", "mf2"):
        return mean_field(g, MfConfig(cfg.lambda0, Scheme(cfg.integrator)))
    if cfg.integrator == "ukf":
        return ukf_integral(g, UkfConfig(cfg.ukf_alpha))
    # Monte Carlo: one stream per activation, keyed by its contents, so batch
    # order and batch composition never change a row's result.
    mu = g.mu.reshape(-1, g.n_classes)
    cov = g.cov.reshape(-1, g.n_classes, g.n_classes)
    out = np.empty_like(mu)
    for i in range(mu.shape[0]):
        rng = np.random.default_rng(_row_seed(cfg.seed, mu[i], cov[i]))
        out[i] = mc_integral(GaussianActivation(mu[i], cov[i]), cfg.mc_samples, rng)
    return out.reshape(g.mu.shape)


def point_logits(m, x, temps=TemperatureConfig()):
    return (features(m, np.atleast_2d(np.asarray(x, dtype=float))) @ last_layer(m)) / temps.t_act


def predict_proba(m, curv, cfg, x):
    """``(n, K)`` probabilities for a 2-D batch of inputs."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] == 0:
        return np.zeros((0, m.n_classes))
    if cfg.integrator == "point":
        return softmax(point_logits(m, x, cfg.temps))
    return integrate(logit_gaussian(m, curv, cfg.temps, x), cfg)


def _make(probs, g=None):
    k = int(np.argmax(probs))  # first index wins ties
    return Prediction(probs, k, float(probs[k]), g)


def predict(m, curv, cfg, x):
    if cfg.integrator == "point":
        return _make(softmax(point_logits(m, x, cfg.temps))[0])
    g = logit_gaussian(m, curv, cfg.temps, np.asarray(x, dtype=float))
    return _make(integrate(g, cfg), g)


def predict_batch(m, curv, cfg, x):
    x = np.asarray(x, dtype=float)
    if x.shape[0] == 0:
        return []
    if cfg.integrator == "point":
        return [_make(p) for p in softmax(point_logits(m, x, cfg.temps))]
    g = logit_gaussian(m, curv, cfg.temps, x)
    probs = integrate(g, cfg)
    return [_make(probs[i], g[i]) for i in range(len(probs))]


def write_predictions_csv(path, probs, labels=None, comment=None):
    """Columns: index, label (if given), predicted_class, ood_score, p_0..p_{K-1}."""
    probs = np.asarray(probs)
    k = probs.shape[1]
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        head = ["index"] + (["label"] if labels is not None else []) + ["predicted_class", "ood_score"]
        w.writerow(head + [f"p_{c}" for c in range(k)])
        for i, p in enumerate(probs):
            pred = int(np.argmax(p))
            row = [i] + ([int(labels[i])] if labels is not None else []) + [pred, repr(float(p[pred]))]
            w.writerow(row + [repr(float(v)) for v in p])
