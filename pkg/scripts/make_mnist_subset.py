"""Write a small MNIST subset as gzipped IDX files.

The source is the 5000-digit sample (500 per class) bundled with mlxtend
(``pip install mlxtend``). Digits are shuffled with a fixed seed and split
into 4500 training and 500 test images.

    python scripts/make_mnist_subset.py data/mnist-5k
"""

import argparse
import pathlib

import numpy as np

from srcnet.data import ImageDataset, save_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=pathlib.Path)
    ap.add_argument("--n-test", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    from mlxtend.data import mnist_data

    X, y = mnist_data()
    perm = np.random.default_rng(args.seed).permutation(len(y))
    X = X[perm].reshape(-1, 28, 28) / 255.0
    y = y[perm]
    args.out.mkdir(parents=True, exist_ok=True)
    n_test = args.n_test
    splits = {"train": slice(n_test, None), "t10k": slice(0, n_test)}
    for name, sl in splits.items():
        ds = ImageDataset(X[sl], y[sl])
        save_idx(ds, args.out / f"{name}-images-idx3-ubyte.gz",
                 args.out / f"{name}-labels-idx1-ubyte.gz")
        print(f"{name}: {len(ds)} images, class counts {np.bincount(ds.labels).tolist()}")


if __name__ == "__main__":
    main()
