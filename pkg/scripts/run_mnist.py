"""MNIST run: 2x256 ReLU MLP, Adam, 100 epochs, then tuned-temperature evaluation.

Expects the four standard IDX files in --data-dir. Optional --ood-csv gives
unlabeled OOD inputs (one flattened image per row, header x_0..x_783).
"""

import argparse
import json
from pathlib import Path

from mfuq.cli import main as mfuq

FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", required=True)
    ap.add_argument("--out-dir", default="runs/mnist")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--ood-csv")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    root = Path(args.data_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [str(root / f) for f in FILES]
    cfg = {
        "data": {"source": "idx", "train_images": paths[0], "train_labels": paths[1],
                 "test_images": paths[2], "test_labels": paths[3], "ood_file": args.ood_csv},
        "model": {"hidden": [256, 256]},
        "train": {"lr": 1e-3, "lr_decay": 0.998, "epochs": args.epochs, "batch_size": 100, "weight_decay": 0.0},
    }
    cfg_path = out / "mnist_config.json"
    cfg_path.write_text(json.dumps(cfg, indent=2))
    steps = [["train"], ["curvature"], ["tune-temps"], ["eval", "--integrator", "point"], ["eval", "--tuned"]]
    if args.ood_csv:
        steps.append(["ood"])
    for argv in steps:
        code = mfuq(argv + ["--out-dir", str(out), "--config", str(cfg_path), "--seed", str(args.seed)])
        if code:
            raise SystemExit(f"{' '.join(argv)} exited with {code}")
    print((out / "eval_report.json").read_text())


if __name__ == "__main__":
    main()
