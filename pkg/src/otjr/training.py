"""Training objectives (OTJR and baselines) and the SGD training loop.

All per-sample terms are averaged over the batch. ``z`` denotes clean logits
and ``z_adv`` logits of the PGD batch. The adversarial batch is the moving
distribution of the sliced-Wasserstein term and clean logits the target.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, AttackSpec, pgd, run_attack
from .autodiff import (ContractError, Graph, NumericError, Tensor, add, cross_entropy,
                       inner, l2norm, log_softmax, mean, mul, scale, softmax, square,
                       sub, sum as tsum)
from .models import Params, forward, init, MLPSpec
from .transport import match, sample_projections, sliced_w1_tensor, trajectories

log = logging.getLogger(__name__)

VARIANTS = ("XE", "PGD_AT", "ALP", "TRADES", "RANDOM_JR", "SW_ONLY", "OTJR",
            "OTJR_TRADES", "OPTIMAL_JR")
ADVERSARIAL = {"PGD_AT", "ALP", "TRADES", "SW_ONLY", "OTJR", "OTJR_TRADES", "OPTIMAL_JR"}

# reference settings reported for the full-scale runs (unnormalized SW sum)
REFERENCE_PRESETS = {
    "cifar10": {"K": 32, "lambda_j": 0.002, "lambda_sw": 64.0},
    "cifar100": {"K": 128, "lambda_j": 0.001, "lambda_sw": 64.0},
}


@dataclass(frozen=True)
class LossSpec:
    variant: str = "OTJR"
    lam: float = 1.0  # TRADES weight / ALP logit-pairing weight
    alpha: float = 0.5  # ALP clean/adversarial mix
    lambda_j: float = 0.0
    lambda_sw: float = 0.0
    K: int = 32
    trades_kl: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown loss variant '{self.variant}'")
        for name in ("lam", "alpha", "lambda_j", "lambda_sw"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        if self.K < 1:
            raise ContractError("K must be >= 1")

    @property
    def adversarial(self) -> bool:
        return self.variant in ADVERSARIAL


def xe(z, y) -> Tensor:
    return mean(cross_entropy(z, y))


def soft_xe(target_logits, logits, kl: bool = False) -> Tensor:
    """Batch mean of -sum_c S(target)_c log S(logits)_c (or the KL divergence)."""
    p = softmax(target_logits, axis=-1)
    ce = scale(tsum(mul(p, log_softmax(logits)), axis=1), -1.0)
    if kl:
        ce = add(ce, tsum(mul(p, log_softmax(target_logits)), axis=1))
    return mean(ce)


def trades(z, z_adv, y, lam: float, kl: bool = False) -> Tensor:
    return add(xe(z, y), scale(soft_xe(z, z_adv, kl), lam))


def alp(z, z_adv, y, alpha: float, lam: float) -> Tensor:
    mix = add(scale(xe(z, y), alpha), scale(xe(z_adv, y), 1.0 - alpha))
    return add(mix, scale(mean(l2norm(sub(z_adv, z), axis=1)), lam))


def loss_baseline(spec: LossSpec, z, z_adv, y, jr=None, sw=None) -> Tensor:
    """Logit-level objectives; RANDOM_JR and SW_ONLY take their extra term precomputed."""
    v = spec.variant
    if v in ADVERSARIAL and z_adv is None:
        raise ContractError(f"{v} needs adversarial logits")
    if v == "XE":
        return xe(z, y)
    if v == "PGD_AT":
        return xe(z_adv, y)
    if v == "TRADES":
        return trades(z, z_adv, y, spec.lam, spec.trades_kl)
    if v == "ALP":
        return alp(z, z_adv, y, spec.alpha, spec.lam)
    if v == "RANDOM_JR":
        if jr is None:
            raise ContractError("RANDOM_JR needs the Jacobian term")
        return add(xe(z, y), scale(jr, spec.lambda_j))
    if v == "SW_ONLY":
        if sw is None:
            raise ContractError("SW_ONLY needs the SW term")
        return add(xe(z_adv, y), scale(sw, spec.lambda_sw))
    raise ContractError(f"{v} is not a baseline objective")


def _jr_from(graph, xv, z, directions) -> Tensor:
    (gx,) = graph.grad(tsum(inner(z, directions)), [xv], record=True)
    return mean(tsum(square(gx), axis=1))


@dataclass
class BatchLoss:
    total: Tensor
    components: dict
    directions: np.ndarray | None = None
    sw_value: float | None = None


def batch_objective(params: Params, weights: list, x, y, x_adv, spec: LossSpec,
                    rng: np.random.Generator, directions=None) -> BatchLoss:
    """Build the loss for one batch on the graph that owns ``weights``.

    ``rng`` draws the SW projections (K per batch) or the random JR
    directions (one per sample). Components are already weighted, and the
    total is their left-to-right sum. Passing ``directions`` overrides the
    JR directions (gradient checks use this to hold them fixed).
    """
    fixed = directions
    graph = weights[0].graph
    v = spec.variant
    needs_jr = v in ("RANDOM_JR", "OTJR", "OTJR_TRADES", "OPTIMAL_JR") and spec.lambda_j > 0
    xv = graph.variable(x) if needs_jr else x
    z = forward(params, xv, weights).logits
    z_adv = forward(params, x_adv, weights).logits if spec.adversarial else None
    C = z.shape[1]
    comps: dict[str, Tensor] = {}
    directions = None
    sw_val = None

    if v in ("XE", "PGD_AT", "TRADES", "ALP"):
        comps["at"] = loss_baseline(spec, z, z_adv, y)
    elif v == "RANDOM_JR":
        comps["at"] = xe(z, y)
        if needs_jr:
            directions = sample_projections(len(x), C, rng=rng).vectors
            if fixed is not None:
                directions = fixed
            comps["jr"] = scale(_jr_from(graph, xv, z, directions), spec.lambda_j)
    else:
        proj = sample_projections(spec.K, C, rng=rng)
        sm = match(z_adv, z, proj)
        sw_val = sm.value
        if v == "OTJR_TRADES":
            comps["at"] = trades(z, z_adv, y, spec.lam, spec.trades_kl)
        elif v == "OPTIMAL_JR":
            comps["at"] = xe(z, y)
        else:
            comps["at"] = xe(z_adv, y)
        if v != "SW_ONLY" and needs_jr:
            directions = (trajectories(sm.movement_sums()).directions
                          if fixed is None else fixed)
            comps["jr"] = scale(_jr_from(graph, xv, z, directions), spec.lambda_j)
        if v != "OPTIMAL_JR" and spec.lambda_sw > 0:
            comps["sw"] = scale(sliced_w1_tensor(z_adv, z, sm), spec.lambda_sw)

    total = None
    for t in comps.values():
        total = t if total is None else add(total, t)
    return BatchLoss(total, {k: t.item() for k, t in comps.items()}, directions, sw_val)


def loss_otjr(params: Params, x, y, attack: AttackConfig, spec: LossSpec,
              rng: np.random.Generator, x_adv=None):
    """OTJR loss and its weighted components for one batch; generates PGD if needed."""
    if x_adv is None:
        x_adv = pgd(params, x, y, attack)
    g = Graph()
    weights = params.tensors(g)
    bl = batch_objective(params, weights, x, y, x_adv, spec, rng)
    return bl.total, bl.components, (g, weights)


# ------------------------------------------------------------------ loop

@dataclass(frozen=True)
class TrainConfig:
    loss: LossSpec = field(default_factory=LossSpec)
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(eps=0.1, step=0.025, steps=10))
    lr: float = 0.05
    momentum: float = 0.9
    decay_epochs: tuple = ()
    decay_factor: float = 0.1
    epochs: int = 10
    batch_size: int = 128
    data_seed: int = 0
    projection_seed: int = 0
    attack_seed: int = 0
    eval_attack: AttackSpec = field(default_factory=lambda: AttackSpec("pgd", 0.1, 20))
    eval_samples: int = 500

    def __post_init__(self):
        d = tuple(int(e) for e in self.decay_epochs)
        object.__setattr__(self, "decay_epochs", d)
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ContractError("decay epochs must be strictly increasing")
        if d and d[-1] >= self.epochs:
            raise ContractError("decay epochs must be < epochs")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ContractError("invalid epochs / batch size / learning rate")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay_factor ** sum(1 for e in self.decay_epochs if epoch >= e)


@dataclass
class MetricsHistory:
    records: list = field(default_factory=list)

    def append(self, rec: dict):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def columns(self) -> list[str]:
        cols: list[str] = []
        for r in self.records:
            cols += [k for k in r if k not in cols]
        return cols

    def write_csv(self, path, header: str | None = None, wall_time: bool = True):
        cols = [c for c in self.columns() if wall_time or c != "wall_time"]
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                w.writerow([_fmt(r.get(c, "")) for c in cols])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


@dataclass
class TrainResult:
    params: Params
    history: MetricsHistory


def _evaluate(params, cfg: TrainConfig, eval_set):
    if eval_set is None or cfg.eval_samples == 0:
        return {}
    x, y = eval_set
    n = min(cfg.eval_samples, len(x))
    res = run_attack(params, x[:n], y[:n], cfg.eval_attack)
    return {"clean_acc": res.clean_accuracy, "robust_acc": res.robust_accuracy}


def train(spec_or_params, cfg: TrainConfig, x, y, eval_set=None, progress=None) -> TrainResult:
    """SGD with momentum over shuffled minibatches; deterministic given the seeds.

    ``progress`` (optional callable) receives each epoch's record.
    """
    params = init(spec_or_params) if isinstance(spec_or_params, MLPSpec) else spec_or_params.copy()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    shuffle_rng = np.random.default_rng(cfg.data_seed)
    proj_rng = np.random.default_rng(cfg.projection_seed)
    attack_rng = np.random.default_rng(cfg.attack_seed)
    velocity = np.zeros_like(params.flat)
    history = MetricsHistory()
    batch_idx = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        order = shuffle_rng.permutation(len(x))
        sums: dict[str, float] = {}
        nb = 0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            try:
                x_adv = None
                if cfg.loss.adversarial:
                    acfg = replace(cfg.attack, seed=int(attack_rng.integers(2**63)))
                    x_adv = pgd(params, xb, yb, acfg)
                g = Graph()
                weights = params.tensors(g)
                bl = batch_objective(params, weights, xb, yb, x_adv, cfg.loss, proj_rng)
                loss_val = bl.total.item()
                if not np.isfinite(loss_val):
                    raise NumericError("non-finite loss")
                grad = params.flatten_grads(g.grad(bl.total, weights))
            except NumericError as exc:
                raise NumericError(f"batch {batch_idx} (epoch {epoch}): {exc}") from None
            if not np.all(np.isfinite(grad)):
                raise NumericError(f"batch {batch_idx} (epoch {epoch}): non-finite gradient")
            velocity = cfg.momentum * velocity + grad
            params.flat -= lr * velocity
            sums["loss"] = sums.get("loss", 0.0) + loss_val
            for k, v in bl.components.items():
                sums[k] = sums.get(k, 0.0) + v
            nb += 1
            batch_idx += 1
        rec = {"epoch": epoch + 1, "lr": lr}
        rec.update({k: v / max(nb, 1) for k, v in sums.items()})
        rec.update(_evaluate(params, cfg, eval_set))
        rec["wall_time"] = time.perf_counter() - t0
        history.append(rec)
        log.info("epoch %d %s", epoch + 1, {k: round(v, 4) if isinstance(v, float) else v
                                            for k, v in rec.items()})
        if progress is not None:
            progress(rec)
    return TrainResult(params, history)


def loss_spec_dict(spec: LossSpec) -> dict:
    return asdict(spec)
