#!/usr/bin/env python3
"""Build the desk-scale MNIST subset as IDX files.

Source: the `mnist` npm package (10,000 MNIST digits stored as JSON arrays of
pixel/255 rounded to three decimals). Fetch it with `npm pack mnist` and
extract the tarball, then run

    python3 scripts/build_mnist_subset.py path/to/package data/mnist-desk

The 10,000 digits are shuffled with a fixed seed and split 8,000 / 2,000 into
train / test files.
"""

import json
import os
import struct
import sys

import numpy as np

SIDE = 28
TEST_SIZE = 2000
SEED = 20240611


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIDE, SIDE))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    package, out = sys.argv[1], sys.argv[2]
    xs, ys = [], []
    for digit in range(10):
        with open(os.path.join(package, "src", "digits", f"{digit}.json")) as f:
            raw = np.asarray(json.load(f)["data"], dtype=np.float64)
        n = raw.size // (SIDE * SIDE)
        pixels = np.rint(raw[: n * SIDE * SIDE] * 255.0).clip(0, 255)
        xs.append(pixels.reshape(n, SIDE * SIDE))
        ys.append(np.full(n, digit))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = np.random.default_rng(SEED).permutation(len(y))
    x, y = x[perm], y[perm]
    os.makedirs(out, exist_ok=True)
    n_train = len(y) - TEST_SIZE
    write_images(os.path.join(out, "train-images-idx3-ubyte"), x[:n_train])
    write_labels(os.path.join(out, "train-labels-idx1-ubyte"), y[:n_train])
    write_images(os.path.join(out, "t10k-images-idx3-ubyte"), x[n_train:])
    write_labels(os.path.join(out, "t10k-labels-idx1-ubyte"), y[n_train:])
    print(f"wrote {n_train} train / {TEST_SIZE} test digits to {out}")


if __name__ == "__main__":
    main()
