"""Carve a reduced MNIST copy, still in IDX format, out of the original files.

The ``mnist-data`` npm tarball ships the four original uncompressed IDX
files. This keeps the full t10k split and the first ``--train-per-class``
digits of each class from the training split (file order), and writes
everything gzip-compressed, which ``otjr.data.load_idx`` reads directly.

    npm pack mnist-data
    python tools/build_mnist_idx.py --tarball mnist-data-1.2.6.tgz --out data/mnist
"""
import argparse
import gzip
import tarfile
from pathlib import Path

import numpy as np


def _read(tar, name):
    raw = tar.extractfile(f"package/data/{name}").read()
    ndim = raw[3]
    dims = [int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim)]
    return np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim).reshape(dims)


def _write(path, arr, magic):
    header = magic.to_bytes(4, "big") + b"".join(
        int(n).to_bytes(4, "big") for n in arr.shape)
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(header + np.ascontiguousarray(arr).tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tarball", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--train-per-class", type=int, default=1200)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tarfile.open(args.tarball) as tar:
        xtr = _read(tar, "train-images-idx3-ubyte")
        ytr = _read(tar, "train-labels-idx1-ubyte")
        xte = _read(tar, "t10k-images-idx3-ubyte")
        yte = _read(tar, "t10k-labels-idx1-ubyte")

    keep = np.sort(np.concatenate([
        np.flatnonzero(ytr == c)[:args.train_per_class] for c in range(10)]))
    _write(out / "train-images-idx3-ubyte.gz", xtr[keep], 0x00000803)
    _write(out / "train-labels-idx1-ubyte.gz", ytr[keep], 0x00000801)
    _write(out / "t10k-images-idx3-ubyte.gz", xte, 0x00000803)
    _write(out / "t10k-labels-idx1-ubyte.gz", yte, 0x00000801)
    print("train", len(keep), "t10k", len(yte))


if __name__ == "__main__":
    main()
