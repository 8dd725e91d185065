#!/usr/bin/env python3
"""Build the bundled 10k-digit MNIST subset as IDX files.

Source: the `mnist` npm package (v1.1.0), which ships 10,000 MNIST digits as
JSON arrays of grayscale values in [0, 1]. The digits are shuffled with a fixed
seed and split 8,000 train / 2,000 test.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist-10k
"""
import json
import random
import struct
import sys
from pathlib import Path

TRAIN = 8000


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main(src, dst):
    samples = []
    for digit in range(10):
        data = json.loads((Path(src) / f"{digit}.json").read_text())["data"]
        for start in range(0, len(data), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in data[start : start + 784]]
            samples.append((pixels, digit))
    random.Random(20220101).shuffle(samples)
    dst = Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    train, test = samples[:TRAIN], samples[TRAIN:]
    write_images(dst / "train-images-idx3-ubyte", [s[0] for s in train])
    write_labels(dst / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_images(dst / "t10k-images-idx3-ubyte", [s[0] for s in test])
    write_labels(dst / "t10k-labels-idx1-ubyte", [s[1] for s in test])
    print(f"{len(train)} train / {len(test)} test written to {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
