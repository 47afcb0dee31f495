"""Writes a 5,000-image MNIST subset as gzipped IDX files.

Source: the mnist_5k.csv.gz table shipped inside the mlxtend wheel
(500 images per digit, taken from the original MNIST distribution).
Split: 400 train / 100 test per digit, each split shuffled with a fixed seed.

    pip download --no-deps mlxtend -d /tmp/wheels
    python3 scripts/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/mnist-5k
"""
import gzip
import io
import struct
import sys
import zipfile

import numpy as np


def write_idx(path, magic, array):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in array.shape)
    # mtime=0 keeps the gzip bytes reproducible
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as out:
        out.write(header + array.astype(np.uint8).tobytes())


def main(wheel, out_dir):
    table = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    rows = np.loadtxt(io.BytesIO(gzip.decompress(table)), delimiter=",")
    pixels, labels = rows[:, :-1].astype(np.uint8), rows[:, -1].astype(np.uint8)
    train, test = [], []
    for digit in range(10):
        idx = np.flatnonzero(labels == digit)
        train.extend(idx[:400])
        test.extend(idx[400:])
    rng = np.random.default_rng(0)
    for name, idx in (("train", np.array(train)), ("t10k", np.array(test))):
        idx = rng.permutation(idx)
        write_idx(f"{out_dir}/{name}-images-idx3-ubyte.gz", 2051, pixels[idx].reshape(-1, 28, 28))
        write_idx(f"{out_dir}/{name}-labels-idx1-ubyte.gz", 2049, labels[idx])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
