"""Run configuration: JSON schema, defaults, and builders for the typed objects."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .attacks import AttackConfig, AttackSpec
from .data import Dataset, gen_blobs, gen_two_moons, load_idx, subset
from .models import MLPSpec
from .training import VARIANTS, LossSpec, TrainConfig


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_int = {"type": "integer"}
_seed = {"type": "integer", "minimum": 0}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _obj({
    "dataset": _obj({
        "kind": {"enum": ["two_moons", "blobs", "idx"]},
        "n": {"type": "integer", "minimum": 2},
        "n_test": {"type": "integer", "minimum": 1},
        "noise": {"type": "number", "minimum": 0},
        "C": {"type": "integer", "minimum": 1},
        "spread": {"type": "number", "minimum": 0},
        "seed": _seed,
        "train_images": {"type": "string"},
        "train_labels": {"type": "string"},
        "test_images": {"type": "string"},
        "test_labels": {"type": "string"},
        "n_per_class": {"type": "integer", "minimum": 1},
        "test_per_class": {"type": "integer", "minimum": 1},
    }, ["kind"]),
    "model": _obj({
        "widths": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3},
        "activation": {"enum": ["relu", "softplus"]},
        "seed": _seed,
    }, ["widths"]),
    "train": _obj({
        "loss": _obj({
            "variant": {"enum": list(VARIANTS)},
            "lam": {"type": "number", "minimum": 0},
            "alpha": {"type": "number", "minimum": 0, "maximum": 1},
            "lambda_j": {"type": "number", "minimum": 0},
            "lambda_sw": {"type": "number", "minimum": 0},
            "K": {"type": "integer", "minimum": 1},
            "trades_kl": {"type": "boolean"},
        }, ["variant"]),
        "lr": {"type": "number", "minimum": 0},
        "momentum": {"type": "number", "minimum": 0, "maximum": 1},
        "decay_epochs": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "decay_factor": {"type": "number", "exclusiveMinimum": 0},
        "epochs": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "seeds": _obj({"data": _seed, "projection": _seed, "attack": _seed}),
    }, ["loss"]),
    "attack": _obj({
        "train": _obj({
            "eps": {"type": "number", "minimum": 0},
            "step": {"type": "number", "exclusiveMinimum": 0},
            "steps": {"type": "integer", "minimum": 1},
            "norm": {"enum": ["linf", "l2"]},
            "random_start": {"type": "boolean"},
        }),
        "eval": _obj({
            "kind": {"enum": ["none", "fgsm", "pgd", "l2pgd", "mim"]},
            "eps": {"type": "number", "minimum": 0},
            "steps": {"type": "integer", "minimum": 1},
            "step": {"type": "number", "exclusiveMinimum": 0},
            "samples": {"type": "integer", "minimum": 0},
        }),
    }),
    "output": {"type": "string"},
}, ["dataset", "model", "train"])

DEFAULTS = {
    "dataset": {"n": 1000, "n_test": 500, "noise": 0.1, "C": 3, "spread": 0.5, "seed": 0,
                "n_per_class": 1000, "test_per_class": 100},
    "model": {"activation": "relu", "seed": 0},
    "train": {"lr": 0.05, "momentum": 0.9, "decay_epochs": [], "decay_factor": 0.1,
              "epochs": 10, "batch_size": 128,
              "seeds": {"data": 0, "projection": 0, "attack": 0},
              "loss": {"lam": 1.0, "alpha": 0.5, "lambda_j": 0.0, "lambda_sw": 0.0, "K": 32,
                       "trades_kl": False}},
    "attack": {"train": {"eps": 0.1, "steps": 10, "norm": "linf", "random_start": False},
               "eval": {"kind": "pgd", "eps": 0.1, "steps": 20, "samples": 500}},
}


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(source, base_dir=None) -> dict:
    """Validate a RunConfig (path or dict) and fill defaults; idx paths become absolute."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"{path}: no such config file") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        base_dir = path.parent if base_dir is None else base_dir
    else:
        raw = source
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    ds = cfg["dataset"]
    if ds["kind"] == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if key not in ds:
                raise ConfigError(f"config invalid at dataset: idx datasets need '{key}'")
            p = Path(ds[key])
            if not p.is_absolute() and base_dir is not None:
                p = Path(base_dir) / p
            ds[key] = str(p.resolve())
    try:
        model_spec(cfg)
        train_config(cfg)
    except ValueError as exc:
        raise ConfigError(f"config invalid: {exc}") from None
    return cfg


def model_spec(cfg) -> MLPSpec:
    return MLPSpec.from_dict(cfg["model"])


def train_config(cfg) -> TrainConfig:
    t, a = cfg["train"], cfg["attack"]
    ta, ev = a["train"], a["eval"]
    eps = float(ta["eps"])
    step = float(ta.get("step", eps / 4 if eps > 0 else 1e-3))
    attack = AttackConfig(eps=eps, step=step, steps=int(ta["steps"]), norm=ta["norm"],
                          random_start=bool(ta["random_start"]))
    return TrainConfig(
        loss=LossSpec(**t["loss"]),
        attack=attack,
        lr=float(t["lr"]), momentum=float(t["momentum"]),
        decay_epochs=tuple(t["decay_epochs"]), decay_factor=float(t["decay_factor"]),
        epochs=int(t["epochs"]), batch_size=int(t["batch_size"]),
        data_seed=int(t["seeds"]["data"]), projection_seed=int(t["seeds"]["projection"]),
        attack_seed=int(t["seeds"]["attack"]),
        eval_attack=eval_attack(cfg), eval_samples=int(ev["samples"]),
    )


def eval_attack(cfg) -> AttackSpec:
    ev = cfg["attack"]["eval"]
    return AttackSpec(ev["kind"], float(ev["eps"]), int(ev["steps"]), ev.get("step"))


def build_datasets(block) -> tuple[Dataset, Dataset]:
    kind = block["kind"]
    if kind == "two_moons":
        return (gen_two_moons(block["n"], block["noise"], block["seed"], "train"),
                gen_two_moons(block["n_test"], block["noise"], block["seed"] + 1, "test"))
    if kind == "blobs":
        return (gen_blobs(block["n"], block["C"], block["spread"], block["seed"], "train"),
                gen_blobs(block["n_test"], block["C"], block["spread"], block["seed"] + 1, "test"))
    train = load_idx(block["train_images"], block["train_labels"], "train")
    test = load_idx(block["test_images"], block["test_labels"], "test")
    return (subset(train, block["n_per_class"], block["seed"]),
            subset(test, block["test_per_class"], block["seed"]))
