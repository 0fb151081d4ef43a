"""Final accuracy mean and variance as the number of graph-conv layers grows.

    python scripts/run_gcn_layers.py --layers 0 1 2 3 --seeds 0 1 2 3 4
"""
import argparse
from pathlib import Path

import numpy as np

from gecco.data import load_idx
from gecco.model import ModelConfig, GeccoModel
from gecco.train import train_loop


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", default="data/mnist")
    ap.add_argument("--layers", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--no-residual", action="store_true", help="plain sigmoid(A H W) graph convolution")
    args = ap.parse_args()
    d = Path(args.data)
    train = load_idx(d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte")
    test = load_idx(d / "test-images-idx3-ubyte", d / "test-labels-idx1-ubyte")

    print(f"{'layers':>6}{'mean':>8}{'var':>11}  per-seed")
    for n in args.layers:
        accs = []
        for seed in args.seeds:
            cfg = ModelConfig(gcn_layers=n, gcn_residual=not args.no_residual)
            model = GeccoModel.init(cfg, seed)
            accs.append(train_loop(model, train, test, epochs=args.epochs, seed=seed).eval_accuracy[-1])
        print(f"{n:>6}{np.mean(accs):8.4f}{np.var(accs):11.2e}  {' '.join(f'{a:.3f}' for a in accs)}", flush=True)


if __name__ == "__main__":
    main()
