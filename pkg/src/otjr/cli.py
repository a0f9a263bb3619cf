"""Command-line entry points: train, attack, eval, diagnose, oracle.

Exit codes: 0 success, 1 invalid input (flags, config, files), 2 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import config as rc
from . import diagnostics as dg
from .attacks import AttackSpec, input_gradient, run_attack, write_attack_csv
from .autodiff import ContractError, NumericError
from .checkpoint import CheckpointError, atomic_path, checkpoint_load, checkpoint_save, config_hash
from .data import IDXError
from .models import init
from .oracle import format_table, run_oracle
from .training import train

log = logging.getLogger("otjr")

SUITE_SCHEMA = {
    "type": "object",
    "properties": {
        "attacks": {"type": "array", "minItems": 1, "items": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["none", "fgsm", "pgd", "l2pgd", "mim"]},
                "eps": {"type": "number", "minimum": 0},
                "steps": {"type": "integer", "minimum": 1},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "decay": {"type": "number", "minimum": 0},
            },
            "required": ["kind", "eps"],
            "additionalProperties": False,
        }},
        "samples": {"type": "integer", "minimum": 1},
    },
    "required": ["attacks"],
    "additionalProperties": False,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_path(out, kind: str, ckpt_id: str) -> Path:
    """A directory (existing, or spelled with a trailing slash) gets ``<kind>_<id>.csv``."""
    p = Path(out)
    if p.is_dir() or str(out).endswith(("/", "\\")):
        return p / f"{kind}_{ckpt_id}.csv"
    return p


def _header(manifest: dict, **extra) -> str:
    fields = {"config_hash": manifest.get("config_hash", ""),
              "checkpoint_id": manifest.get("checkpoint_id", "")}
    fields.update(extra)
    return " ".join(f"{k}={v}" for k, v in fields.items())


def _load(ckpt):
    params, man = checkpoint_load(ckpt)
    if "config" not in man:
        raise CheckpointError(f"{ckpt}: manifest has no run config")
    cfg = rc.load_config(man["config"])
    _, test = rc.build_datasets(cfg["dataset"])
    return params, man, cfg, test


def _take(ds, n):
    n = len(ds) if n is None else min(n, len(ds))
    return ds.x[:n], ds.y[:n]


def cmd_train(args) -> int:
    cfg = rc.load_config(args.config)
    spec = rc.model_spec(cfg)
    tcfg = rc.train_config(cfg)
    train_ds, test_ds = rc.build_datasets(cfg["dataset"])
    if train_ds.x.shape[1] != spec.n_inputs:
        raise ContractError(f"model expects {spec.n_inputs} inputs, dataset has {train_ds.x.shape[1]}")
    if train_ds.n_classes > spec.n_classes:
        raise ContractError(f"model has {spec.n_classes} outputs, dataset has {train_ds.n_classes} classes")
    chash = config_hash(cfg)
    out = Path(args.out or cfg.get("output") or "run")
    res = train(init(spec), tcfg, train_ds.x, train_ds.y, eval_set=(test_ds.x, test_ds.y))
    for rec in res.history.records:
        log.info("epoch %d wall_time %.3fs", rec["epoch"], rec["wall_time"])
    last = res.history.records[-1] if len(res.history) else {}
    manifest = {"config": cfg, "config_hash": chash, "checkpoint_id": chash,
                "format": "otjr-checkpoint-1", "seed": spec.seed, "epoch": tcfg.epochs,
                "loss": tcfg.loss.variant,
                "metrics": {k: v for k, v in last.items() if k not in ("epoch", "wall_time")}}
    checkpoint_save(res.params, manifest, out)
    with atomic_path(out / "metrics.csv") as tmp:
        res.history.write_csv(tmp, _header(manifest), wall_time=False)
    print(out)
    return 0


def cmd_attack(args) -> int:
    params, man, _, test = _load(args.ckpt)
    spec = AttackSpec(args.attack, args.eps, args.steps, args.step, args.decay)
    x, y = _take(test, args.samples)
    res = run_attack(params, x, y, spec)
    path = _out_path(args.out, "attack", man["checkpoint_id"])
    head = _header(man, attack=args.attack, eps=args.eps, steps=args.steps,
                   clean_acc=res.clean_accuracy, robust_acc=res.robust_accuracy)
    with atomic_path(path) as tmp:
        write_attack_csv(tmp, res, head)
    print(f"clean_acc={res.clean_accuracy:.4f} robust_acc={res.robust_accuracy:.4f} -> {path}")
    return 0


def cmd_eval(args) -> int:
    try:
        suite = json.loads(Path(args.suite).read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"{args.suite}: no such suite file") from None
    except json.JSONDecodeError as exc:
        raise rc.ConfigError(f"{args.suite}: invalid JSON ({exc})") from None
    try:
        jsonschema.validate(suite, SUITE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise rc.ConfigError(f"{args.suite}: {exc.message}") from None
    params, man, _, test = _load(args.ckpt)
    x, y = _take(test, suite.get("samples"))
    rows = []
    for a in suite["attacks"]:
        spec = AttackSpec(a["kind"], float(a["eps"]), int(a.get("steps", 20)), a.get("step"),
                          float(a.get("decay", 1.0)))
        res = run_attack(params, x, y, spec)
        rows.append((spec.kind, spec.eps, spec.steps, res.clean_accuracy, res.robust_accuracy))
        print(f"{spec.kind} eps={spec.eps} steps={spec.steps} robust_acc={res.robust_accuracy:.4f}")
    path = _out_path(args.out, "eval", man["checkpoint_id"])
    with atomic_path(path) as tmp, open(tmp, "w") as fh:
        fh.write(f"# {_header(man, suite=config_hash(suite), samples=len(y))}\n")
        fh.write("attack,eps,steps,clean_acc,robust_acc\n")
        for k, e, s, c, r in rows:
            fh.write(f"{k},{e!r},{s},{c!r},{r!r}\n")
    return 0


def cmd_diagnose(args) -> int:
    params, man, cfg, test = _load(args.ckpt)
    meta = {"config_hash": man.get("config_hash", ""), "checkpoint_id": man.get("checkpoint_id", "")}
    ev = rc.eval_attack(cfg)
    x, y = _take(test, args.samples)
    if args.kind == "activation":
        x_adv = ev.run(params, x, y)
        rep = dg.activation_profile(params, x, x_adv, meta)
    elif args.kind == "inputgrad":
        rep = dg.input_grad_l1(params, x, y, eps=ev.eps, meta=meta)
    elif args.kind == "ratio":
        x_adv = ev.run(params, x, y)
        rep = dg.layer_grad_ratio(params, x, x_adv, y, meta=meta)
    elif args.kind == "boundary":
        anchor = x[args.anchor:args.anchor + 1]
        d1 = input_gradient(params, anchor, y[args.anchor:args.anchor + 1])
        if not np.any(d1):
            d1 = np.ones_like(anchor)
        d2 = np.random.default_rng(args.seed).normal(size=anchor.shape)
        rep = dg.boundary_slice(params, anchor, d1, d2, args.half_width, args.resolution,
                                dict(meta, anchor=args.anchor, direction_seed=args.seed))
        rep.meta["region_radius"] = dg.anchor_region_radius(rep)
    else:
        rep = dg.sanity_suite(params, x, y, meta=meta)
    path = _out_path(args.out, args.kind, man["checkpoint_id"])
    with atomic_path(path) as tmp:
        rep.write_csv(tmp)
    print(path)
    return 0


def cmd_oracle(args) -> int:
    rows = run_oracle()
    print(format_table(rows))
    return 0 if all(r.passed for r in rows) else 2


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="otjr", description="OT-guided Jacobian regularization lab")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a JSON run config")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="attack a checkpoint on its test split")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--attack", required=True, choices=["fgsm", "pgd", "l2pgd", "mim"])
    a.add_argument("--eps", type=float, required=True)
    a.add_argument("--steps", type=int, default=20)
    a.add_argument("--step", type=float)
    a.add_argument("--decay", type=float, default=1.0)
    a.add_argument("--samples", type=int)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("eval", help="run a JSON attack suite against a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--suite", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diagnose", help="write a diagnostic table for a checkpoint")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--kind", required=True,
                   choices=["activation", "inputgrad", "ratio", "boundary", "sanity"])
    d.add_argument("--samples", type=int, default=500)
    d.add_argument("--anchor", type=int, default=0)
    d.add_argument("--half-width", type=float, default=0.5)
    d.add_argument("--resolution", type=int, default=41)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose)

    o = sub.add_parser("oracle", help="run the exact-oracle verification suite")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"otjr: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"otjr: numeric failure: {exc}", file=sys.stderr)
        return 2
    except (rc.ConfigError, ContractError, CheckpointError, IDXError, FileNotFoundError) as exc:
        print(f"otjr: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
