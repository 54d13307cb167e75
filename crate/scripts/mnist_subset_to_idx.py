#!/usr/bin/env python3
"""Write the 5000-digit MNIST subset shipped inside the mlxtend wheel as IDX files.

Usage: python3 scripts/mnist_subset_to_idx.py <out_dir>

The wheel is fetched with `pip download --no-deps mlxtend` when not already
present in /tmp/mlxtend-wheel. Output files follow the standard MNIST names:
train-images-idx3-ubyte.gz and train-labels-idx1-ubyte.gz.
"""
import glob
import gzip
import os
import struct
import subprocess
import sys
import zipfile

WHEEL_DIR = "/tmp/mlxtend-wheel"
MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main() -> None:
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "data/mnist-5k"
    os.makedirs(out_dir, exist_ok=True)
    wheels = glob.glob(os.path.join(WHEEL_DIR, "mlxtend-*.whl"))
    if not wheels:
        subprocess.check_call(
            [sys.executable, "-m", "pip", "download", "--no-deps", "mlxtend", "-d", WHEEL_DIR]
        )
        wheels = glob.glob(os.path.join(WHEEL_DIR, "mlxtend-*.whl"))
    with zipfile.ZipFile(wheels[0]) as z:
        rows = gzip.decompress(z.read(MEMBER)).decode().splitlines()

    pixels = bytearray()
    labels = bytearray()
    for row in rows:
        values = [int(float(v)) for v in row.split(",")]
        pixels.extend(values[:-1])
        labels.append(values[-1])
    n = len(rows)
    assert len(pixels) == n * 784

    # mtime=0 keeps the archives byte-reproducible.
    with open(os.path.join(out_dir, "train-images-idx3-ubyte.gz"), "wb") as f:
        with gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as g:
            g.write(struct.pack(">IIII", 2051, n, 28, 28))
            g.write(bytes(pixels))
    with open(os.path.join(out_dir, "train-labels-idx1-ubyte.gz"), "wb") as f:
        with gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as g:
            g.write(struct.pack(">II", 2049, n))
            g.write(bytes(labels))
    print(f"wrote {n} samples to {out_dir}")


if __name__ == "__main__":
    main()
