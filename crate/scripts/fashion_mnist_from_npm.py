#!/usr/bin/env python3
"""Convert the `fashion-mnist` npm package (JSON pixel arrays) into IDX files.

Usage:
    npm pack fashion-mnist@1.1.0          # or download the tarball from the registry
    python3 scripts/fashion_mnist_from_npm.py fashion-mnist-1.1.0.tgz OUT_DIR

Writes train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte,
t10k-labels-idx1-ubyte and a SHA256SUMS manifest (`<sha256> <relative path>` lines)
into OUT_DIR. The split is deterministic: per class, the first 6000 samples go to
train and the remainder to test; each split is then shuffled with a fixed seed.
"""

import hashlib
import json
import random
import struct
import sys
import tarfile
from pathlib import Path

TRAIN_PER_CLASS = 6000
SEED = 20211015


def write_idx_images(path, images, rows, cols):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), rows, cols))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    if len(sys.argv) != 3:
        print(__doc__)
        sys.exit(2)
    tarball, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    with tarfile.open(tarball, "r:gz") as tar:
        for label in range(10):
            member = tar.getmember(f"package/src/clothes/{label}.json")
            data = json.load(tar.extractfile(member))["data"]
            # the package carries two empty placeholder rows in class 0
            data = [img for img in data if len(img) == 784]
            for i, img in enumerate(data):
                (train if i < TRAIN_PER_CLASS else test).append((img, label))
    rng = random.Random(SEED)
    rng.shuffle(train)
    rng.shuffle(test)
    files = {}
    for name, split in (("train", train), ("t10k", test)):
        img_name = f"{name}-images-idx3-ubyte"
        lbl_name = f"{name}-labels-idx1-ubyte"
        write_idx_images(out / img_name, [s[0] for s in split], 28, 28)
        write_idx_labels(out / lbl_name, [s[1] for s in split])
        files[img_name] = files[lbl_name] = None
    with open(out / "SHA256SUMS", "w") as f:
        for rel in sorted(files):
            digest = hashlib.sha256((out / rel).read_bytes()).hexdigest()
            f.write(f"{digest} {rel}\n")
    print(f"train={len(train)} test={len(test)} -> {out}")


if __name__ == "__main__":
    main()
