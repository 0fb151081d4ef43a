"""Train the three ablation variants on the MNIST subset over several seeds.

    python scripts/run_ablation.py --data data/mnist --seeds 0 1 2 3 4 --epochs 15
"""
import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from gecco.data import load_idx
from gecco.model import ModelConfig, GeccoModel
from gecco.train import train_loop

VARIANTS = {
    "full": dict(),
    "no_attention": dict(use_attention=False),
    "no_gcn_no_attention": dict(use_gcn=False, use_attention=False),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", default="data/mnist")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--csv", help="also write per-run rows here")
    args = ap.parse_args()
    d = Path(args.data)
    train = load_idx(d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte")
    test = load_idx(d / "test-images-idx3-ubyte", d / "test-labels-idx1-ubyte")

    rows = []
    for seed in args.seeds:
        for name, kw in VARIANTS.items():
            model = GeccoModel.init(ModelConfig(**kw), seed)
            rep = train_loop(model, train, test, epochs=args.epochs, seed=seed)
            rows.append((name, seed, rep.eval_accuracy[-1]))
            print(f"{name:<22} seed {seed}  acc {rep.eval_accuracy[-1]:.4f}", flush=True)
    print()
    print(f"{'variant':<22}{'mean':>8}{'var':>11}")
    for name in VARIANTS:
        accs = [a for n, _, a in rows if n == name]
        print(f"{name:<22}{np.mean(accs):8.4f}{np.var(accs):11.2e}")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["variant", "seed", "accuracy"])
            w.writerows(rows)


if __name__ == "__main__":
    sys.exit(main())
