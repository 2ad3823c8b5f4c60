#!/usr/bin/env python3
"""Fetch the official MNIST IDX files and store them gzipped with a SHA256SUMS manifest.

Usage: fetch_mnist.py [output dir]   (default: data/mnist)

The files come from the npm package `mnist-data`, which ships the four original
uncompressed IDX files. They are checked against the published per-class label
counts before being written. Gzip runs with mtime=0 so the manifest is stable.
"""
import collections
import gzip
import hashlib
import os
import subprocess
import sys
import tarfile
import tempfile

PACKAGE = "mnist-data@1.2.6"
FILES = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
COUNTS = {
    "train-labels-idx1-ubyte": [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949],
    "t10k-labels-idx1-ubyte": [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009],
}

out = sys.argv[1] if len(sys.argv) > 1 else os.path.join("data", "mnist")
os.makedirs(out, exist_ok=True)
with tempfile.TemporaryDirectory() as tmp:
    tgz = subprocess.run(["npm", "pack", PACKAGE, "--silent"], cwd=tmp, check=True, capture_output=True, text=True)
    with tarfile.open(os.path.join(tmp, tgz.stdout.strip().splitlines()[-1])) as tar:
        tar.extractall(tmp)
    sums = []
    for name in FILES:
        with open(os.path.join(tmp, "package", "data", name), "rb") as fh:
            payload = fh.read()
        if name in COUNTS:
            hist = collections.Counter(payload[8:])
            if [hist[d] for d in range(10)] != COUNTS[name]:
                sys.exit(f"{name}: label counts do not match the official release")
        path = os.path.join(out, name + ".gz")
        with open(path, "wb") as raw:
            with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0, compresslevel=9) as gz:
                gz.write(payload)
        with open(path, "rb") as fh:
            sums.append(f"{hashlib.sha256(fh.read()).hexdigest()}  {name}.gz")
with open(os.path.join(out, "SHA256SUMS"), "w") as fh:
    fh.write("\n".join(sums) + "\n")
print(f"wrote {len(FILES)} files to {out}")
