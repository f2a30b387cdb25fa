#!/usr/bin/env python3
"""Build the 10k-digit MNIST subset shipped in data/mnist10k.tar.gz.

Source: the `mnist` npm package (10,000 MNIST digits stored as pixel/255
rounded to three decimals, which maps back to the original bytes exactly).

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/

Each class is split 80/20 into train/test, then both splits are shuffled
with a fixed seed and written as big-endian IDX files.
"""
import argparse
import json
import random
import struct
import tarfile
import io
from pathlib import Path


def idx_images(images):
    header = struct.pack(">IIII", 0x00000803, len(images), 28, 28)
    return header + b"".join(bytes(img) for img in images)


def idx_labels(labels):
    return struct.pack(">II", 0x00000801, len(labels)) + bytes(labels)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--train-fraction", type=float, default=0.8)
    ap.add_argument("--seed", type=int, default=20190101)
    args = ap.parse_args()

    train, test = [], []
    for digit in range(10):
        flat = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        images = []
        for k in range(len(flat) // 784):
            px = [int(round(v * 255.0)) for v in flat[k * 784:(k + 1) * 784]]
            assert all(0 <= p <= 255 for p in px)
            images.append(px)
        cut = int(round(len(images) * args.train_fraction))
        train += [(img, digit) for img in images[:cut]]
        test += [(img, digit) for img in images[cut:]]

    rng = random.Random(args.seed)
    rng.shuffle(train)
    rng.shuffle(test)

    files = {
        "train-images-idx3-ubyte": idx_images([i for i, _ in train]),
        "train-labels-idx1-ubyte": idx_labels([l for _, l in train]),
        "t10k-images-idx3-ubyte": idx_images([i for i, _ in test]),
        "t10k-labels-idx1-ubyte": idx_labels([l for _, l in test]),
    }
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with tarfile.open(args.out_dir / "mnist10k.tar.gz", "w:gz") as tar:
        for name, payload in files.items():
            info = tarfile.TarInfo(f"mnist10k/{name}")
            info.size = len(payload)
            info.mtime = 0
            tar.addfile(info, io.BytesIO(payload))
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main()
