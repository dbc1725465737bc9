"""Feedforward ReLU classifier with an explicit last layer, plus Adam training.

Last-layer parameters are handled as an augmented matrix ``W_aug`` of shape
``(D + 1, K)``: the hidden features get a constant 1 appended so the output
bias is the final row. Flattening is feature-major, class-minor
(``W_aug.ravel()`` in C order, i.e. index ``f * K + k``); curvature, jackknife
and predictor all rely on this order.
"""

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from mfuq.errors import DimensionMismatch, EmptyBatch, NonFiniteLoss
from mfuq.gsint import softmax
from mfuq.store import read_npz, write_npz

log = logging.getLogger(__name__)

FLATTEN_ORDER = "feature-major/class-minor"


@dataclass(frozen=True)
class LabeledBatch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"inputs {x.shape} and labels {y.shape} disagree")
        if y.size and y.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx):
        return LabeledBatch(self.inputs[idx], self.labels[idx])


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 0.998  # multiplicative, applied once per epoch
    epochs: int = 100
    batch_size: int = 100
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("step size must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.weight_decay < 0:
            raise ValueError("invalid training configuration")


@dataclass(frozen=True)
class MlpModel:
    """Weights are ``(d_in, d_out)`` per layer; the last pair is the output layer."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=float) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=float) for b in self.biases)
        if len(ws) != len(bs) or not ws:
            raise DimensionMismatch("need matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionMismatch(f"layer {i}: weight {w.shape}, bias {b.shape}")
            if i and ws[i - 1].shape[1] != w.shape[0]:
                raise DimensionMismatch(f"layer {i} input does not chain")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_classes(self):
        return self.weights[-1].shape[1]

    @property
    def feature_dim(self):
        """Length of g(x), including the appended constant."""
        return self.weights[-1].shape[0] + 1

    def params(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def fingerprint(self):
        h = hashlib.sha256(repr(self.layer_dims).encode())
        for p in self.params():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()


def init_mlp(layer_dims, seed=0):
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        ws.append(rng.standard_normal((d_in, d_out)) * np.sqrt(2.0 / d_in))
        bs.append(np.zeros(d_out))
    return MlpModel(tuple(ws), tuple(bs))


def _as_inputs(m, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != m.layer_dims[0]:
        raise DimensionMismatch(f"input has {x.shape[-1]} entries, model expects {m.layer_dims[0]}")
    return x


def _hidden(m, x):
    acts = [x]
    for w, b in zip(m.weights[:-1], m.biases[:-1]):
        acts.append(np.maximum(acts[-1] @ w + b, 0.0))
    return acts


def features(m, x):
    """g(x; phi) with the constant-1 bias feature appended. Works on one input or a batch."""
    h = _hidden(m, _as_inputs(m, x))[-1]
    return np.concatenate([h, np.ones(h.shape[:-1] + (1,))], axis=-1)


def last_layer(m):
    """Augmented last-layer matrix of shape (D + 1, K)."""
    return np.vstack([m.weights[-1], m.biases[-1][None, :]])


def with_last_layer(m, w_aug):
    w_aug = np.asarray(w_aug, dtype=float).reshape(m.feature_dim, m.n_classes)
    return MlpModel(m.weights[:-1] + (w_aug[:-1],), m.biases[:-1] + (w_aug[-1],))


def logits(m, x):
    return features(m, x) @ last_layer(m)


def _log_softmax(a):
    return a - logsumexp(a, axis=-1, keepdims=True)


def nll_loss(m, batch):
    """Summed negative log-likelihood over the batch."""
    lp = _log_softmax(logits(m, batch.inputs))
    return float(-np.sum(lp[np.arange(len(batch)), batch.labels]))


def _onehot(labels, k):
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def grad_per_sample(m, x, y):
    """Last-layer gradient g(x) (outer) (p - onehot(y)), flattened feature-major."""
    g = features(m, x)
    if g.ndim != 1:
        raise DimensionMismatch("grad_per_sample expects a single input")
    p = softmax(g @ last_layer(m))
    r = p.copy()
    r[y] -= 1.0
    return np.outer(g, r).ravel()


def last_layer_grads(m, batch):
    """Per-sample last-layer gradients stacked as rows, shape (n, (D + 1) K)."""
    g = features(m, batch.inputs)
    r = softmax(g @ last_layer(m)) - _onehot(batch.labels, m.n_classes)
    return (g[:, :, None] * r[:, None, :]).reshape(len(batch), -1)


def loss_and_grads(m, x, y):
    """Summed NLL and its gradient for every parameter, in ``m.params()`` order."""
    acts = _hidden(m, x)
    a = acts[-1] @ m.weights[-1] + m.biases[-1]
    lp = _log_softmax(a)
    n = x.shape[0]
    loss = -np.sum(lp[np.arange(n), y])
    delta = np.exp(lp) - _onehot(y, m.n_classes)
    grads = []
    for layer in range(len(m.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(acts[layer].T @ delta)
        if layer:
            delta = (delta @ m.weights[layer].T) * (acts[layer] > 0)
    grads.reverse()
    return float(loss), grads


def _from_params(m, params):
    return MlpModel(tuple(params[0::2]), tuple(params[1::2]))


def train(init, data, cfg):
    """Adam on shuffled mini-batches. Returns ``(model, trace)``.

    ``trace[0]`` is the mean training NLL at initialization and ``trace[e]`` the
    mean after epoch ``e``.
    """
    if len(data) == 0:
        raise EmptyBatch("cannot train on an empty batch")
    n = len(data)
    rng = np.random.default_rng(cfg.seed)
    params = [p.copy() for p in init.params()]
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    model = init
    trace = [nll_loss(init, data) / n]
    step = 0
    lr = cfg.lr
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, data.inputs[idx], data.labels[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch)
            step += 1
            c1 = 1.0 - cfg.beta1**step
            c2 = 1.0 - cfg.beta2**step
            for j, (p, g) in enumerate(zip(params, grads)):
                g = g / len(idx)
                if cfg.weight_decay and j % 2 == 0:
                    g = g + cfg.weight_decay * p
                m1[j] = cfg.beta1 * m1[j] + (1.0 - cfg.beta1) * g
                m2[j] = cfg.beta2 * m2[j] + (1.0 - cfg.beta2) * g * g
                p -= lr * (m1[j] / c1) / (np.sqrt(m2[j] / c2) + cfg.eps)
            model = _from_params(model, params)
        lr *= cfg.lr_decay
        epoch_loss = nll_loss(model, data) / n
        if not np.isfinite(epoch_loss):
            raise NonFiniteLoss(epoch)
        trace.append(epoch_loss)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)
    return model, np.asarray(trace)


def save_model(path, m, meta=None):
    arrays = {f"p{i:03d}": p for i, p in enumerate(m.params())}
    info = {
        "kind": "mlp-checkpoint",
        "layer_dims": m.layer_dims,
        "flatten_order": FLATTEN_ORDER,
        "fingerprint": m.fingerprint(),
    }
    info.update(meta or {})
    write_npz(path, arrays, info)


def load_model(path):
    arrays, meta = read_npz(path)
    if meta.get("flatten_order") != FLATTEN_ORDER:
        raise ValueError(f"unsupported flattening order {meta.get('flatten_order')!r}")
    params = [arrays[k] for k in sorted(arrays)]
    return _from_params(None, params), meta
