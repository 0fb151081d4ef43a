"""Write a class-balanced MNIST subset as IDX files.

The digits come from the 5000-image MNIST sample bundled with ``mlxtend``
(500 per class), so no download is needed.

    python scripts/make_mnist_subset.py data/mnist --train 2000 --test 1000
"""
import argparse
from pathlib import Path

import numpy as np

from gecco.data import write_idx


def make_subset(out_dir, n_train=2000, n_test=1000, seed=0):
    from mlxtend.data import mnist_data

    images, labels = mnist_data()
    images = images.reshape(-1, 28, 28).astype(np.uint8)
    rng = np.random.default_rng(seed)
    per_train, per_test = n_train // 10, n_test // 10
    train_idx, test_idx = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(labels == c))
        train_idx.extend(idx[:per_train])
        test_idx.extend(idx[per_train : per_train + per_test])
    train_idx, test_idx = rng.permutation(train_idx), rng.permutation(test_idx)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, idx in (("train", train_idx), ("test", test_idx)):
        img_path = out_dir / f"{split}-images-idx3-ubyte"
        lbl_path = out_dir / f"{split}-labels-idx1-ubyte"
        write_idx(img_path, lbl_path, images[idx], labels[idx])
        paths[split] = (img_path, lbl_path)
    return paths


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for split, (img, lbl) in make_subset(args.out_dir, args.train, args.test, args.seed).items():
        print(f"{split}: {img} {lbl}")


if __name__ == "__main__":
    main()
