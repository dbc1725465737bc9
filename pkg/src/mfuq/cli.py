"""Command-line harness: train, curvature, eval, ood, tune-temps, approx-bench.

Configuration layers, lowest precedence first: built-in defaults, the
``run_config.json`` already in ``--out-dir``, the ``--config`` file, flags.
Every output embeds the resolved config and a schema version. Exit codes:
0 success, 2 config error, 3 data error, 4 numerical failure.
"""

import argparse
import copy
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from mfuq import datasets
from mfuq.curvature import SigmaKind, build_curvature, load_curvature, save_curvature
from mfuq.errors import ConfigError, DataError, EmptyInput, MfuqError
from mfuq.gsint import LAMBDA0_PROBIT
from mfuq.metrics import evaluate_in_domain, evaluate_ood
from mfuq.model import TrainConfig, init_mlp, load_model, save_model, train
from mfuq.predictor import (
    PredictorConfig,
    TemperatureConfig,
    integrate,
    logit_gaussian,
    predict_proba,
    write_predictions_csv,
)
from mfuq.tuning import auroc_objective, grid_search, log_grid, nll_objective

log = logging.getLogger("mfuq")

SCHEMA = "mfuq-run/1"
RUN_CONFIG = "run_config.json"
MODEL_FILE = "model.npz"
CURV_FILE = "curvature.npz"

DEFAULTS = {
    "seed": 0,
    "data": {
        "source": "blobs",
        "classes": 3,
        "n_per_class": 200,
        "dim": 10,
        "spread": 1.5,
        "radius": 3.0,
        "fractions": [0.6, 0.2, 0.2],
        "ood_radius_factor": 3.0,
        "ood_n": 200,
        "ood_file": None,
        "ood_heldout_file": None,
        "train_images": None,
        "train_labels": None,
        "test_images": None,
        "test_labels": None,
        "heldout_fraction": 5000 / 60000,
    },
    "model": {"hidden": [32]},
    "train": {
        "lr": 0.01,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "lr_decay": 0.998,
        "epochs": 200,
        "batch_size": 32,
        "weight_decay": 0.0,
    },
    "curvature": {"sigma_kind": "hinv", "subsample": None},
    "predict": {
        "integrator": "mf0",
        "t_ens": 1.0,
        "t_act": 1.0,
        "lambda0": LAMBDA0_PROBIT,
        "mc_samples": 1000,
        "ukf_alpha": 0.5,
    },
    "eval": {"n_bins": 10},
    "tune": {"objective": "nll", "lo": 1e-3, "hi": 1e3, "points": 7},
    "bench": {"mc_samples": [20, 100, 500], "ref_samples": 1_000_000, "max_points": 200},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in (over or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve_config(args):
    cfg = copy.deepcopy(DEFAULTS)
    saved = os.path.join(args.out_dir, RUN_CONFIG)
    if os.path.exists(saved):
        cfg = _merge(cfg, _read_json(saved).get("config", {}))
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file {args.config} not found")
        cfg = _merge(cfg, _read_json(args.config))
    flags = {
        ("seed",): args.seed,
        ("predict", "integrator"): args.integrator,
        ("curvature", "sigma_kind"): args.sigma_kind,
        ("predict", "t_ens"): args.t_ens,
        ("predict", "t_act"): args.t_act,
        ("predict", "lambda0"): args.lambda0,
        ("train", "epochs"): getattr(args, "epochs", None),
        ("tune", "objective"): getattr(args, "objective", None),
        ("bench", "ref_samples"): getattr(args, "ref_samples", None),
    }
    for path, val in flags.items():
        if val is not None:
            node = cfg
            for key in path[:-1]:
                node = node[key]
            node[path[-1]] = val
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    try:
        train_config(cfg)
        predictor_config(cfg)
        SigmaKind(cfg["curvature"]["sigma_kind"])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, MfuqError):
            raise
        raise ConfigError(str(exc)) from None
    if cfg["data"]["source"] not in ("blobs", "idx"):
        raise ConfigError(f"unknown data source {cfg['data']['source']!r}")
    if cfg["tune"]["objective"] not in ("nll", "auroc"):
        raise ConfigError("tune.objective must be 'nll' or 'auroc'")


def train_config(cfg):
    return TrainConfig(seed=cfg["seed"], **cfg["train"])


def predictor_config(cfg, integrator=None, temps=None):
    p = cfg["predict"]
    return PredictorConfig(
        integrator=integrator or p["integrator"],
        temps=temps or TemperatureConfig(p["t_ens"], p["t_act"]),
        lambda0=p["lambda0"],
        mc_samples=p["mc_samples"],
        seed=cfg["seed"],
        ukf_alpha=p["ukf_alpha"],
    )


# --- data -----------------------------------------------------------------


def load_data(cfg):
    """Returns ``(DatasetSplit, ood_heldout, ood_test)``; OOD arrays may be None."""
    d = cfg["data"]
    seed = cfg["seed"]
    if d["source"] == "blobs":
        full = datasets.gen_blobs(d["classes"], d["n_per_class"], d["dim"], d["spread"], seed, d["radius"])
        sp = datasets.split(full, d["fractions"], seed)
    else:
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not d.get(key):
                raise ConfigError(f"data.{key} is required for IDX data")
        pool = datasets.load_idx(d["train_images"], d["train_labels"])
        test = datasets.load_idx(d["test_images"], d["test_labels"])
        h = d["heldout_fraction"]
        inner = datasets.split(pool, (1.0 - h, h, 0.0), seed)
        sp = datasets.DatasetSplit(inner.train, inner.heldout, test, seed, inner.indices)
    ood_h = ood_t = None
    if d.get("ood_file"):
        ood_t = datasets.read_inputs_csv(d["ood_file"])
        if d.get("ood_heldout_file"):
            ood_h = datasets.read_inputs_csv(d["ood_heldout_file"])
    elif d["source"] == "blobs":
        ood_h = datasets.gen_ood_shell(sp.train, d["ood_radius_factor"], d["ood_n"], seed + 1)
        ood_t = datasets.gen_ood_shell(sp.train, d["ood_radius_factor"], d["ood_n"], seed + 2)
    return sp, ood_h, ood_t


# --- output helpers -------------------------------------------------------


def _header(cfg, kind):
    return {"schema": SCHEMA, "output": kind, "config": cfg}


def write_json(path, cfg, kind, payload):
    doc = _header(cfg, kind)
    doc.update(payload)
    with open(path, "w") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def write_csv(path, cfg, kind, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(_header(cfg, kind), sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _require(path, what):
    if not os.path.exists(path):
        raise DataError(f"{what} not found at {path}; run the earlier step first")


def _load_model_and_curv(out_dir, need_curv=True):
    _require(os.path.join(out_dir, MODEL_FILE), "checkpoint")
    model, _ = load_model(os.path.join(out_dir, MODEL_FILE))
    curv = None
    if need_curv:
        _require(os.path.join(out_dir, CURV_FILE), "curvature cache")
        curv, _ = load_curvature(os.path.join(out_dir, CURV_FILE))
        curv.check_model(model)
    return model, curv


def _tuned_temps(cfg, out_dir, objective):
    path = os.path.join(out_dir, f"tuned_temps_{objective}.json")
    _require(path, "tuned temperatures")
    best = _read_json(path)["best"]
    return TemperatureConfig(best["t_ens"], best["t_act"])


# --- commands -------------------------------------------------------------


def cmd_train(cfg, out_dir, args=None):
    sp, _, _ = load_data(cfg)
    k = int(max(sp.train.labels.max(), sp.test.labels.max() if len(sp.test) else 0)) + 1
    dims = [sp.train.inputs.shape[1]] + list(cfg["model"]["hidden"]) + [k]
    model, trace = train(init_mlp(dims, cfg["seed"]), sp.train, train_config(cfg))
    save_model(os.path.join(out_dir, MODEL_FILE), model, {"config": cfg})
    write_csv(os.path.join(out_dir, "loss_trace.csv"), cfg, "loss-trace", ["epoch", "mean_nll"],
              [(i, float(v)) for i, v in enumerate(trace)])
    write_json(os.path.join(out_dir, RUN_CONFIG), cfg, "run-config", {})
    log.info("trained %s: loss %.4f -> %.4f", dims, trace[0], trace[-1])
    return model


def cmd_curvature(cfg, out_dir, args=None):
    model, _ = _load_model_and_curv(out_dir, need_curv=False)
    sp, _, _ = load_data(cfg)
    c = cfg["curvature"]
    curv = build_curvature(model, sp.train, c["sigma_kind"], c["subsample"], cfg["seed"])
    save_curvature(os.path.join(out_dir, CURV_FILE), curv, {"config": cfg})
    log.info("curvature: dim %d, eps %.4g", curv.sigma.shape[0], curv.epsilon)
    return curv


def cmd_eval(cfg, out_dir, args=None):
    model, curv = _load_model_and_curv(out_dir)
    sp, _, _ = load_data(cfg)
    temps = _tuned_temps(cfg, out_dir, "nll") if getattr(args, "tuned", False) else None
    pcfg = predictor_config(cfg, temps=temps)
    probs = predict_proba(model, curv, pcfg, sp.test.inputs)
    meta = {**pcfg.describe(), "sigma_kind": curv.sigma_kind.value, "split": "test"}
    report = evaluate_in_domain(probs, sp.test.labels, cfg["eval"]["n_bins"], meta)
    _write_report(out_dir, "eval", cfg, report)
    write_predictions_csv(os.path.join(out_dir, "eval_predictions.csv"), probs, sp.test.labels,
                          json.dumps(_header(cfg, "predictions"), sort_keys=True))
    return report


def cmd_ood(cfg, out_dir, args=None):
    model, curv = _load_model_and_curv(out_dir)
    sp, _, ood = load_data(cfg)
    if ood is None:
        raise DataError("no OOD inputs configured (data.ood_file or synthetic blobs)")
    temps = _tuned_temps(cfg, out_dir, "auroc") if getattr(args, "tuned", False) else None
    pcfg = predictor_config(cfg, temps=temps)
    s_in = predict_proba(model, curv, pcfg, sp.test.inputs).max(axis=1)
    s_out = predict_proba(model, curv, pcfg, ood).max(axis=1) if len(ood) else np.zeros(0)
    meta = {**pcfg.describe(), "sigma_kind": curv.sigma_kind.value}
    report = evaluate_ood(s_in, s_out, meta)
    _write_report(out_dir, "ood", cfg, report)
    rows = [("in", i, float(s)) for i, s in enumerate(s_in)] + [("out", i, float(s)) for i, s in enumerate(s_out)]
    write_csv(os.path.join(out_dir, "ood_scores.csv"), cfg, "ood-scores", ["set", "index", "score"], rows)
    return report


def _write_report(out_dir, name, cfg, report):
    write_json(os.path.join(out_dir, f"{name}_report.json"), cfg, f"{name}-report", {"report": report.to_dict()})
    with open(os.path.join(out_dir, f"{name}_report.csv"), "w") as fh:
        fh.write("# " + json.dumps(_header(cfg, f"{name}-report"), sort_keys=True) + "\n")
        fh.write(report.to_csv_row())


def cmd_tune_temps(cfg, out_dir, args=None):
    model, curv = _load_model_and_curv(out_dir)
    sp, ood_h, _ = load_data(cfg)
    t = cfg["tune"]
    grid = log_grid(t["lo"], t["hi"], t["points"])
    pcfg = predictor_config(cfg)
    unit = TemperatureConfig()
    base_in = logit_gaussian(model, curv, unit, sp.heldout.inputs) if len(sp.heldout) else None
    if t["objective"] == "nll":
        if base_in is None:
            raise EmptyInput("held-out split is empty")
        objective = nll_objective(base_in, sp.heldout.labels, pcfg)
    else:
        if base_in is None or ood_h is None or len(ood_h) == 0:
            raise EmptyInput("auroc tuning needs non-empty held-out in-domain and OOD sets")
        objective = auroc_objective(base_in, logit_gaussian(model, curv, unit, ood_h), pcfg)
    best, rows = grid_search(objective, grid, grid, maximize=t["objective"] == "auroc")
    write_csv(os.path.join(out_dir, f"tune_grid_{t['objective']}.csv"), cfg, "tune-grid",
              ["t_ens", "t_act", t["objective"]], rows)
    write_json(os.path.join(out_dir, f"tuned_temps_{t['objective']}.json"), cfg, "tuned-temps",
               {"best": {"t_ens": best.t_ens, "t_act": best.t_act}, "objective": t["objective"]})
    return best


def cmd_approx_bench(cfg, out_dir, args=None):
    model, curv = _load_model_and_curv(out_dir)
    sp, _, ood = load_data(cfg)
    b = cfg["bench"]
    x = sp.test.inputs
    labels = sp.test.labels
    if b["max_points"]:
        x, labels = x[: b["max_points"]], labels[: b["max_points"]]
    pcfg = predictor_config(cfg)
    g = logit_gaussian(model, curv, pcfg.temps, x)
    g_ood = logit_gaussian(model, curv, pcfg.temps, ood) if ood is not None and len(ood) else None
    ref_cfg = replace(pcfg, integrator="mc", mc_samples=int(b["ref_samples"]), seed=cfg["seed"] + 7919)
    reference = integrate(g, ref_cfg)
    schemes = [(f"mc{m}", replace(pcfg, integrator="mc", mc_samples=int(m))) for m in b["mc_samples"]]
    schemes += [(name, replace(pcfg, integrator=name)) for name in ("mf0", "mf1", "mf2", "ukf")]
    summary, tv_cols, timing = [], {}, []
    for name, sc in schemes:
        start = time.perf_counter()
        probs = integrate(g, sc)
        per_example = (time.perf_counter() - start) / max(len(x), 1)
        tv = 0.5 * np.abs(probs - reference).sum(axis=1)
        tv_cols[name] = tv
        rep = evaluate_in_domain(probs, labels, cfg["eval"]["n_bins"])
        row = [name, rep.error_rate, rep.nll, rep.ece, float(np.median(tv)), float(np.max(tv))]
        if g_ood is not None:
            o = evaluate_ood(probs.max(axis=1), integrate(g_ood, sc).max(axis=1))
            row += [o.auroc, o.aupr_in, o.aupr_out, o.detection_accuracy]
        summary.append(row)
        timing.append((name, per_example))
    header = ["integrator", "error_rate", "nll", "ece", "median_tv_to_ref", "max_tv_to_ref"]
    if g_ood is not None:
        header += ["auroc", "aupr_in", "aupr_out", "detection_accuracy"]
    write_csv(os.path.join(out_dir, "approx_bench.csv"), cfg, "approx-bench", header, summary)
    names = [n for n, _ in schemes]
    write_csv(os.path.join(out_dir, "approx_tv.csv"), cfg, "approx-tv", ["index"] + names,
              [[i] + [float(tv_cols[n][i]) for n in names] for i in range(len(x))])
    # wall-clock numbers are not reproducible; kept apart from the byte-stable outputs
    write_csv(os.path.join(out_dir, "approx_timing.csv"), cfg, "approx-timing",
              ["integrator", "seconds_per_example"], timing)
    return summary


COMMANDS = {
    "train": cmd_train,
    "curvature": cmd_curvature,
    "eval": cmd_eval,
    "ood": cmd_ood,
    "tune-temps": cmd_tune_temps,
    "approx-bench": cmd_approx_bench,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mfuq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out-dir", default="runs/default")
        p.add_argument("--seed", type=int)
        p.add_argument("--integrator", choices=["mf0", "mf1", "mf2", "mc", "ukf", "point"])
        p.add_argument("--sigma-kind", choices=[k.value for k in SigmaKind])
        p.add_argument("--t-ens", type=float)
        p.add_argument("--t-act", type=float)
        p.add_argument("--lambda0", type=float)
        if name == "train":
            p.add_argument("--epochs", type=int)
        if name in ("eval", "ood"):
            p.add_argument("--tuned", action="store_true", help="use temperatures from tune-temps")
        if name == "tune-temps":
            p.add_argument("--objective", choices=["nll", "auroc"])
        if name == "approx-bench":
            p.add_argument("--ref-samples", type=int)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args.out_dir, args)
    except MfuqError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        log.error("data error: %s", exc)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
