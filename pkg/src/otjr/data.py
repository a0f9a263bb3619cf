"""Datasets: synthetic 2-D generators and the MNIST IDX container."""
from __future__ import annotations

import gzip
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ContractError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class IDXError(ValueError):
    """Malformed IDX file; message names the file and byte offset."""


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or len(self.x) != len(self.y):
            raise ContractError(f"inputs {self.x.shape} and labels {self.y.shape} do not match")
        if len(self.x) and (self.x.min() < 0 or self.x.max() > 1):
            raise ContractError("inputs must lie in [0, 1]")
        if len(self.y) and self.y.min() < 0:
            raise ContractError("labels must be non-negative")

    def __len__(self):
        return len(self.y)

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1 if len(self.y) else 0


def _minmax(x):
    lo, hi = x.min(0), x.max(0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip((x - lo) / span, 0.0, 1.0)


def two_moons_raw(n: int, noise: float, seed: int):
    """Unscaled interleaved half circles; labels alternate so counts differ by <= 1."""
    if n < 2 or noise < 0:
        raise ContractError("need n >= 2 and noise >= 0")
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    t = rng.uniform(0.0, np.pi, size=n)
    x = np.where(y[:, None] == 0,
                 np.stack([np.cos(t), np.sin(t)], 1),
                 np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], 1))
    if noise > 0:
        x = x + rng.normal(scale=noise, size=x.shape)
    return x, y


def gen_two_moons(n: int, noise: float = 0.1, seed: int = 0, split: str = "train") -> Dataset:
    x, y = two_moons_raw(n, noise, seed)
    return Dataset(_minmax(x), y, split, {"kind": "two_moons", "n": n, "noise": noise, "seed": seed})


def gen_blobs(n: int, C: int = 3, spread: float = 0.5, seed: int = 0, split: str = "train") -> Dataset:
    """Isotropic Gaussian blobs with centres evenly spaced on the unit circle."""
    if n < 2 or C < 1 or spread < 0:
        raise ContractError("need n >= 2, C >= 1, spread >= 0")
    rng = np.random.default_rng(seed)
    y = np.arange(n) % C
    ang = 2 * np.pi * np.arange(C) / C
    centres = 2.0 * np.stack([np.cos(ang), np.sin(ang)], 1)
    x = centres[y] + rng.normal(scale=spread, size=(n, 2))
    return Dataset(_minmax(x), y, split,
                   {"kind": "blobs", "n": n, "C": C, "spread": spread, "seed": seed})


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(path, expect_magic: int, expect_ndim: int):
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IDXError(f"{path}: truncated header at offset 0")
    magic = int.from_bytes(raw[:4], "big")
    if magic != expect_magic:
        raise IDXError(f"{path}: bad magic 0x{magic:08x} at offset 0 (expected 0x{expect_magic:08x})")
    hdr = 4 + 4 * expect_ndim
    if len(raw) < hdr:
        raise IDXError(f"{path}: truncated dimension header at offset {len(raw)}")
    dims = [int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(expect_ndim)]
    need = hdr + int(np.prod(dims))
    if len(raw) < need:
        raise IDXError(f"{path}: truncated data at offset {len(raw)} (expected {need} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=need - hdr, offset=hdr).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an MNIST-format image/label pair (optionally gzip-compressed)."""
    imgs = _parse_idx(images_path, IDX_IMAGES, 3)
    labels = _parse_idx(labels_path, IDX_LABELS, 1)
    if len(imgs) != len(labels):
        raise IDXError(f"{labels_path}: {len(labels)} labels at offset 4 but "
                       f"{images_path} holds {len(imgs)} images")
    x = imgs.reshape(len(imgs), -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), split,
                   {"kind": "idx", "images": str(images_path), "labels": str(labels_path)})


def subset(ds: Dataset, n_per_class: int, seed: int = 0) -> Dataset:
    """Stratified sample of exactly ``n_per_class`` rows per class, in shuffled order."""
    rng = np.random.default_rng(seed)
    picks = []
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.y == c)
        if len(idx) < n_per_class:
            raise ContractError(f"class {c} has {len(idx)} rows, fewer than {n_per_class}")
        picks.append(rng.choice(idx, n_per_class, replace=False))
    order = rng.permutation(np.concatenate(picks))
    prov = dict(ds.provenance, subset={"n_per_class": n_per_class, "seed": seed})
    return Dataset(ds.x[order], ds.y[order], ds.split, prov)
