"""Synthetic blobs, norm-shell OOD points, IDX loading and seeded splits."""

import csv
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from mfuq.errors import BadMagic, CountMismatch, InsufficientSamples, TruncatedFile
from mfuq.model import LabeledBatch

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass(frozen=True)
class DatasetSplit:
    train: LabeledBatch
    heldout: LabeledBatch
    test: LabeledBatch
    split_seed: int
    indices: tuple = ()


def blob_means(k, dim, radius=3.0):
    """Class means evenly spaced on a circle in the first two coordinates."""
    angles = 2.0 * np.pi * np.arange(k) / k
    means = np.zeros((k, dim))
    means[:, 0] = radius * np.cos(angles)
    if dim > 1:
        means[:, 1] = radius * np.sin(angles)
    return means


def gen_blobs(k, n_per_class, dim, spread, seed, radius=3.0):
    if k < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    means = blob_means(k, dim, radius)
    labels = np.repeat(np.arange(k), n_per_class)
    x = means[labels] + spread * rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    return LabeledBatch(x[order], labels[order])


def gen_ood_shell(in_domain, radius_factor, n, seed, thickness=0.25):
    """Uniform directions at radii in [R, (1 + thickness) R], R = factor * 95th-pct in-domain norm."""
    if radius_factor <= 1:
        raise ValueError("radius_factor must exceed 1")
    x = in_domain.inputs if isinstance(in_domain, LabeledBatch) else np.asarray(in_domain, float)
    dim = x.shape[1]
    if n == 0:
        return np.zeros((0, dim))
    base = radius_factor * np.percentile(np.linalg.norm(x, axis=1), 95)
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = base * (1.0 + thickness * rng.uniform(size=(n, 1)))
    return d * r


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"{what}: expected {n} bytes, got {len(buf)}")
    return buf


def _read_idx(path, magic):
    with open(path, "rb") as fh:
        got = struct.unpack(">I", _read_exact(fh, 4, path))[0]
        if got != magic:
            raise BadMagic(f"{path}: magic {got:#010x}, expected {magic:#010x}")
        ndim = magic & 0xFF
        dims = struct.unpack(f">{ndim}I", _read_exact(fh, 4 * ndim, path))
        count = int(np.prod(dims))
        data = np.frombuffer(_read_exact(fh, count, path), dtype=np.uint8)
    return data.reshape(dims)


def load_idx(images_path, labels_path):
    images = _read_idx(images_path, IDX_IMAGES)
    labels = _read_idx(labels_path, IDX_LABELS)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images vs {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return LabeledBatch(x, labels.astype(np.int64))


def write_idx(path, array, magic):
    """Inverse of the IDX reader for uint8 payloads (used for fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def _sizes(n, fractions):
    n_train = int(round(fractions[0] * n))
    n_held = int(round(fractions[1] * n))
    n_held = min(n_held, n - n_train)
    return n_train, n_held, n - n_train - n_held


def split(data, fractions, seed, stratify=None):
    """Seeded shuffle, then contiguous train/held-out/test slices.

    With stratification, samples are ordered by their within-class quantile
    (ties broken by the shuffle) before slicing, which keeps class proportions
    in every split. ``stratify=None`` stratifies whenever each class can put at
    least one sample in every non-empty split; ``True`` makes that mandatory.
    """
    fractions = np.asarray(fractions, dtype=float)
    if fractions.shape != (3,) or np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    n = len(data)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    sizes = _sizes(n, fractions)
    counts = np.bincount(data.labels, minlength=1)
    counts = counts[counts > 0]
    need = sum(1 for s in sizes if s > 0)
    can = counts.size > 0 and counts.min() >= need and all(
        s == 0 or s >= counts.size for s in sizes
    )
    if stratify and not can:
        raise InsufficientSamples("some class cannot supply every split")
    if (stratify is None and can) or stratify:
        labels = data.labels[order]
        rank = np.empty(n)
        for c in np.unique(labels):
            pos = np.nonzero(labels == c)[0]
            rank[pos] = (np.arange(pos.size) + 0.5) / pos.size
        order = order[np.argsort(rank, kind="stable")]
    a, b = sizes[0], sizes[0] + sizes[1]
    idx = (np.sort(order[:a]), np.sort(order[a:b]), np.sort(order[b:]))
    return DatasetSplit(data.subset(idx[0]), data.subset(idx[1]), data.subset(idx[2]), seed, idx)


def write_dataset_csv(path, data):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"x_{j}" for j in range(data.inputs.shape[1])])
        for x, y in zip(data.inputs, data.labels):
            w.writerow([int(y)] + [repr(float(v)) for v in x])


def read_dataset_csv(path):
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return LabeledBatch(arr[:, 1:], arr[:, 0].astype(np.int64))


def write_inputs_csv(path, x):
    """Unlabeled inputs (e.g. an OOD set): header x_0..x_{d-1}, one row per input."""
    x = np.asarray(x, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{j}" for j in range(x.shape[1])])
        for row in x:
            w.writerow([repr(float(v)) for v in row])


def read_inputs_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
    dim = len(header.split(",")) if header else 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return arr.reshape(-1, dim) if arr.size == 0 else arr
