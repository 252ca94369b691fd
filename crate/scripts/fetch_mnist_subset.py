#!/usr/bin/env python3
"""Build a desk-scale MNIST subset in IDX format.

The npm package `mnist` (MIT, cazala) bundles 10,000 MNIST digits as JSON
arrays of pixel intensities in [0, 1] rounded to three decimals. This script
downloads that tarball, restores 8-bit pixels, shuffles with a fixed seed and
writes an 8,000/2,000 train/test split as IDX files:

    data/mnist/train-images-idx3-ubyte   data/mnist/train-labels-idx1-ubyte
    data/mnist/t10k-images-idx3-ubyte    data/mnist/t10k-labels-idx1-ubyte

Usage: python3 scripts/fetch_mnist_subset.py [--out data/mnist] [--tarball PATH]
"""
import argparse
import io
import json
import os
import random
import struct
import tarfile
import urllib.request

URL = "https://registry.npmjs.org/mnist/-/mnist-1.1.0.tgz"
SIDE = 28
N_TEST = 2000
SEED = 20190601


def load_digits(tar):
    samples = []
    for digit in range(10):
        member = tar.extractfile(f"package/src/digits/{digit}.json")
        data = json.load(member)["data"]
        n = len(data) // (SIDE * SIDE)
        for i in range(n):
            chunk = data[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            pixels = bytes(min(255, max(0, round(v * 255))) for v in chunk)
            samples.append((pixels, digit))
    return samples


def write_images(path, samples):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for pixels, _ in samples:
            f.write(pixels)


def write_labels(path, samples):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))
    ap.add_argument("--tarball", help="use a local copy of the npm tarball")
    args = ap.parse_args()

    if args.tarball:
        raw = open(args.tarball, "rb").read()
    else:
        with urllib.request.urlopen(URL, timeout=120) as resp:
            raw = resp.read()
    with tarfile.open(fileobj=io.BytesIO(raw), mode="r:gz") as tar:
        samples = load_digits(tar)

    random.Random(SEED).shuffle(samples)
    test, train = samples[:N_TEST], samples[N_TEST:]
    os.makedirs(args.out, exist_ok=True)
    write_images(os.path.join(args.out, "train-images-idx3-ubyte"), train)
    write_labels(os.path.join(args.out, "train-labels-idx1-ubyte"), train)
    write_images(os.path.join(args.out, "t10k-images-idx3-ubyte"), test)
    write_labels(os.path.join(args.out, "t10k-labels-idx1-ubyte"), test)
    print(f"wrote {len(train)} train / {len(test)} test samples to {os.path.abspath(args.out)}")


if __name__ == "__main__":
    main()
