#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the `mnist` npm package (v1.1.0,
MIT licensed, 10 000 MNIST digits) into gzip-compressed IDX files.

Usage: npm_mnist_to_idx.py <package/src/digits dir> <output dir>

Pixels are stored in the package as value/255 rounded to three decimals;
rounding value*255 recovers the original byte exactly. Samples are shuffled
with a fixed seed so the file is not ordered by class.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main() -> None:
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    images, labels = [], []
    for digit in range(10):
        data = np.array(json.loads((src / f"{digit}.json").read_text())["data"])
        rows = data.reshape(-1, 28 * 28)
        images.append(np.rint(rows * 255).astype(np.uint8))
        labels += [digit] * len(rows)
    images = np.concatenate(images)
    labels = np.array(labels, dtype=np.uint8)
    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    n = len(labels)
    out.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(out / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(out / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())
    print(f"wrote {n} samples to {out}")


if __name__ == "__main__":
    main()
