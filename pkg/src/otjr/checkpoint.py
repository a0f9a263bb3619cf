"""Checkpoint directories and atomic file output.

A checkpoint is ``manifest.json`` plus ``params.bin``, the flat parameter
vector as little-endian float64 in layout order (W0, b0, W1, b1, ...).
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .autodiff import ContractError
from .models import MLPSpec, Params

MANIFEST = "manifest.json"
BLOB = "params.bin"


class CheckpointError(ValueError):
    pass


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@contextmanager
def atomic_path(path):
    """Yield a temp path next to ``path``; rename on success, delete on failure."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_save(params: Params, manifest: dict, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    man = dict(manifest)
    man["spec"] = params.spec.to_dict()
    man["n_params"] = params.spec.n_params
    with atomic_path(d / BLOB) as tmp:
        params.flat.astype("<f8").tofile(tmp)
    with atomic_path(d / MANIFEST) as tmp:
        with open(tmp, "w") as fh:
            json.dump(man, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return d


def checkpoint_load(directory) -> tuple[Params, dict]:
    d = Path(directory)
    mpath, bpath = d / MANIFEST, d / BLOB
    if not mpath.exists():
        raise FileNotFoundError(f"{mpath}: missing checkpoint manifest")
    with open(mpath) as fh:
        man = json.load(fh)
    try:
        spec = MLPSpec.from_dict(man["spec"])
    except (KeyError, TypeError, ContractError) as exc:
        raise CheckpointError(f"{mpath}: invalid model spec ({exc})") from None
    if "n_params" in man and int(man["n_params"]) != spec.n_params:
        raise CheckpointError(
            f"{mpath}: spec implies {spec.n_params} parameters, manifest records {man['n_params']}")
    if not bpath.exists():
        raise FileNotFoundError(f"{bpath}: missing parameter blob")
    size = bpath.stat().st_size
    if size != 8 * spec.n_params:
        raise CheckpointError(
            f"{bpath}: expected {spec.n_params} float64 values, found {size / 8:g}")
    flat = np.fromfile(bpath, dtype="<f8").astype(np.float64)
    return Params(spec, flat), man
