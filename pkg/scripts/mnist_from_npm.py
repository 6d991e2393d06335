"""Convert the digits bundled in the npm ``mnist`` package (v1.1.0) to IDX files.

The package ships 10,000 real MNIST digits as JSON arrays of 784 floats in
[0, 1] rounded to three decimals. Pixels are mapped back to bytes with
round(v * 255) and the samples are interleaved with a fixed seed so that
contiguous slices are not sorted by class.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python scripts/mnist_from_npm.py package/src/digits data/mnist-npm
"""
import argparse
import json
from pathlib import Path

import numpy as np

from nnhybrid.data import Dataset, write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        raw = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        arr = np.rint(np.asarray(raw) * 255).clip(0, 255).reshape(-1, 1, 28, 28)
        images.append(arr)
        labels.append(np.full(arr.shape[0], digit))
    x = np.concatenate(images)
    y = np.concatenate(labels)
    order = np.random.default_rng(args.seed).permutation(y.size)
    ds = Dataset(x[order] / 255.0, y[order], 10, "mnist-npm")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(args.out_dir / "images-idx3-ubyte.gz", args.out_dir / "labels-idx1-ubyte.gz", ds)
    print(f"wrote {len(ds)} samples to {args.out_dir}")


if __name__ == "__main__":
    main()
