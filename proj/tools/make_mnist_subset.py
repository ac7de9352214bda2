#!/usr/bin/env python3
"""Write the 5000-image MNIST sample shipped inside the mlxtend wheel as IDX files.

Usage: make_mnist_subset.py OUT_DIR [--wheel PATH] [--train 4000]

The source rows are grouped by class. The split is stratified: the first
--train/10 images of each class go to train-*-ubyte, the rest to t10k-*-ubyte.
Within a split images are interleaved class by class.
"""
import argparse
import glob
import gzip
import io
import os
import struct
import subprocess
import sys
import tempfile
import zipfile


def find_wheel(explicit):
    if explicit:
        return explicit
    tmp = tempfile.mkdtemp()
    subprocess.check_call([sys.executable, "-m", "pip", "download", "mlxtend",
                           "--no-deps", "-q", "-d", tmp])
    return glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]


def write_idx(path, magic, dims, payload):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(bytes(payload))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--wheel")
    ap.add_argument("--train", type=int, default=4000)
    args = ap.parse_args()

    with zipfile.ZipFile(find_wheel(args.wheel)) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    rows = [list(map(int, line.split(","))) for line in io.StringIO(raw.decode()) if line.strip()]
    labels = [r[-1] for r in rows]
    pixels = [r[:-1] for r in rows]
    assert all(len(p) == 784 for p in pixels)

    by_class = {}
    for lab, pix in zip(labels, pixels):
        by_class.setdefault(lab, []).append(pix)
    per_class = args.train // len(by_class)

    def interleave(parts):
        out = []
        for i in range(max(len(p) for _, p in parts)):
            out.extend((lab, p[i]) for lab, p in parts if i < len(p))
        return out

    classes = sorted(by_class)
    splits = {
        "train": interleave([(c, by_class[c][:per_class]) for c in classes]),
        "t10k": interleave([(c, by_class[c][per_class:]) for c in classes]),
    }
    os.makedirs(args.out, exist_ok=True)
    for name, items in splits.items():
        n = len(items)
        write_idx(os.path.join(args.out, f"{name}-images-idx3-ubyte"), 0x00000803, [n, 28, 28],
                  [v for _, p in items for v in p])
        write_idx(os.path.join(args.out, f"{name}-labels-idx1-ubyte"), 0x00000801, [n],
                  [lab for lab, _ in items])
        print(f"{name}: {n} images")


if __name__ == "__main__":
    main()
