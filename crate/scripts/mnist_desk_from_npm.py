#!/usr/bin/env python3
"""Build the desk-scale MNIST IDX files shipped under data/mnist-desk/.

Source: the `mnist` npm package (MIT, https://www.npmjs.com/package/mnist),
which bundles 10,000 MNIST digits as per-class JSON arrays of pixel values
rounded to three decimals. round(v * 255) recovers the original bytes exactly.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_desk_from_npm.py package/src/digits data/mnist-desk

Writes gzipped IDX files; examples are interleaved by class (0,1,...,9,0,1,...)
so that a first-N-per-class slice reads a prefix of each class.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 500
TEST_PER_CLASS = 150
SIDE = 28


def load_digits(src):
    digits = []
    for d in range(10):
        raw = json.loads((src / f"{d}.json").read_text())["data"]
        px = [int(round(v * 255)) for v in raw]
        n = len(px) // (SIDE * SIDE)
        digits.append([bytes(px[i * 784:(i + 1) * 784]) for i in range(n)])
    return digits


def write_idx(dst, stem, images, labels):
    with gzip.GzipFile(dst / f"{stem}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), SIDE, SIDE))
        for img in images:
            f.write(img)
    with gzip.GzipFile(dst / f"{stem}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def interleave(digits, start, count):
    images, labels = [], []
    for i in range(start, start + count):
        for d in range(10):
            images.append(digits[d][i])
            labels.append(d)
    return images, labels


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    digits = load_digits(src)
    write_idx(dst, "train", *interleave(digits, 0, TRAIN_PER_CLASS))
    write_idx(dst, "test", *interleave(digits, TRAIN_PER_CLASS, TEST_PER_CLASS))


if __name__ == "__main__":
    main()
