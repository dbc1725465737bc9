import numpy as np
import pytest

from mfuq.datasets import gen_blobs, split
from mfuq.model import TrainConfig, init_mlp, train


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (q * w) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_problem():
    """Small trained 3-class blob classifier shared by the slower tests."""
    data = gen_blobs(3, 60, 4, 1.2, seed=7)
    sp = split(data, (0.6, 0.2, 0.2), seed=7)
    model, trace = train(init_mlp([4, 8, 3], seed=7), sp.train,
                         TrainConfig(lr=0.02, epochs=60, batch_size=16, seed=7))
    return model, sp, trace


def logistic_problem(seed, n=50, d=3):
    """Non-separable binary logistic regression with a constant feature appended."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-x @ w))).astype(int)
    return np.hstack([x, np.ones((n, 1))]), y


SMALL_CONFIG = {
    "data": {"n_per_class": 40, "dim": 4, "ood_n": 40},
    "model": {"hidden": [8]},
    "train": {"epochs": 30, "batch_size": 16},
    "tune": {"points": 3},
    "bench": {"mc_samples": [20, 100, 500], "ref_samples": 20000, "max_points": 30},
}


def run_cli(*argv):
    from mfuq.cli import main

    return main([str(a) for a in argv])


@pytest.fixture(scope="session")
def small_config(tmp_path_factory):
    import json

    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return path


@pytest.fixture(scope="session")
def benchmark_run(tmp_path_factory):
    """The default synthetic benchmark: trained, curvature cached, temperatures tuned."""
    out = tmp_path_factory.mktemp("benchmark")
    for argv in (["train"], ["curvature"], ["tune-temps", "--objective", "nll"], ["tune-temps", "--objective", "auroc"]):
        assert run_cli(*argv, "--out-dir", out) == 0
    return out


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail=""):
    """Log a one-line verdict for an acceptance criterion, then assert it."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
