"""White-box attacks (FGSM, PGD under Linf/L2, MIM) and robust accuracy."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .autodiff import ContractError, Graph, NumericError, cross_entropy, sum as tsum
from .models import Params, logits, predict


def xe_loss(z, y):
    return cross_entropy(z, y)


@dataclass(frozen=True)
class AttackConfig:
    eps: float
    step: float
    steps: int = 10
    norm: str = "linf"
    random_start: bool = False
    clamp: tuple = (0.0, 1.0)
    seed: int = 0
    loss: Callable = field(default=xe_loss, compare=False)

    def __post_init__(self):
        if self.eps < 0:
            raise ContractError("eps must be >= 0")
        if self.step <= 0:
            raise ContractError("step must be > 0")
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if self.norm not in ("linf", "l2"):
            raise ContractError("norm must be 'linf' or 'l2'")


def input_gradient(params: Params, x, y, loss: Callable = xe_loss) -> np.ndarray:
    """d(sum_i loss_i)/dx; row i is the gradient of sample i's own loss."""
    g = Graph()
    xv = g.variable(x)
    total = tsum(loss(logits(params, xv), y))
    (gx,) = g.grad(total, [xv])
    if not np.all(np.isfinite(gx.data)):
        raise NumericError("non-finite input gradient")
    return gx.data


def _rownorm(a, ord):
    flat = a.reshape(len(a), -1)
    if ord == 1:
        n = np.abs(flat).sum(1)
    else:
        n = np.sqrt((flat * flat).sum(1))
    return n.reshape((-1,) + (1,) * (a.ndim - 1))


def _unit_l2(g):
    n = _rownorm(g, 2)
    return np.divide(g, n, out=np.zeros_like(g), where=n > 0)


def _project(x_adv, x, cfg: AttackConfig):
    if cfg.norm == "linf":
        x_adv = np.clip(x_adv, x - cfg.eps, x + cfg.eps)
    else:
        d = x_adv - x
        n = _rownorm(d, 2)
        factor = np.where(n > cfg.eps, cfg.eps / np.where(n > 0, n, 1.0), 1.0)
        x_adv = x + d * factor
    lo, hi = cfg.clamp
    return np.clip(x_adv, lo, hi)


def _start(x, cfg: AttackConfig):
    x = np.asarray(x, dtype=np.float64)
    if not cfg.random_start or cfg.eps == 0:
        return x.copy()
    rng = np.random.default_rng(cfg.seed)
    if cfg.norm == "linf":
        delta = rng.uniform(-cfg.eps, cfg.eps, size=x.shape)
    else:
        d = rng.standard_normal(x.shape)
        r = rng.uniform(0, 1, size=(len(x),) + (1,) * (x.ndim - 1))
        delta = _unit_l2(d) * cfg.eps * r
    return _project(x + delta, x, cfg)


def fgsm(params: Params, x, y, eps: float, clamp=(0.0, 1.0), loss: Callable = xe_loss) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = input_gradient(params, x, y, loss)
    return np.clip(x + eps * np.sign(g), *clamp)


def pgd(params: Params, x, y, cfg: AttackConfig) -> np.ndarray:
    """Projected gradient ascent on the attack loss, projected every step."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = _start(x, cfg)
    for _ in range(cfg.steps):
        g = input_gradient(params, x_adv, y, cfg.loss)
        step = np.sign(g) if cfg.norm == "linf" else _unit_l2(g)
        x_adv = _project(x_adv + cfg.step * step, x, cfg)
    return x_adv


def mim(params: Params, x, y, cfg: AttackConfig, decay: float = 1.0) -> np.ndarray:
    """Momentum iterative method: accumulate L1-normalized gradients, step on the sign."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = _start(x, cfg)
    vel = np.zeros_like(x)
    for _ in range(cfg.steps):
        g = input_gradient(params, x_adv, y, cfg.loss)
        n1 = _rownorm(g, 1)
        vel = decay * vel + np.divide(g, n1, out=np.zeros_like(g), where=n1 > 0)
        step = np.sign(vel) if cfg.norm == "linf" else _unit_l2(vel)
        x_adv = _project(x_adv + cfg.step * step, x, cfg)
    return x_adv


@dataclass(frozen=True)
class AttackSpec:
    """Which attack to run plus its budget; ``kind`` in {none, fgsm, pgd, l2pgd, mim}."""

    kind: str = "pgd"
    eps: float = 0.1
    steps: int = 20
    step: float | None = None
    decay: float = 1.0
    random_start: bool = False
    seed: int = 0

    def config(self) -> AttackConfig:
        norm = "l2" if self.kind == "l2pgd" else "linf"
        step = self.step if self.step is not None else (max(self.eps, 1e-12) / 4
                                                       if self.kind != "fgsm" else max(self.eps, 1e-12))
        return AttackConfig(eps=self.eps, step=step, steps=max(self.steps, 1), norm=norm,
                            random_start=self.random_start, seed=self.seed)

    def run(self, params: Params, x, y) -> np.ndarray:
        if self.kind == "none" or self.eps == 0:
            return np.asarray(x, dtype=np.float64).copy()
        if self.kind == "fgsm":
            return fgsm(params, x, y, self.eps)
        if self.kind in ("pgd", "l2pgd"):
            return pgd(params, x, y, self.config())
        if self.kind == "mim":
            return mim(params, x, y, self.config(), self.decay)
        raise ContractError(f"unknown attack kind '{self.kind}'")


@dataclass
class AttackResult:
    clean_pred: np.ndarray
    adv_pred: np.ndarray
    labels: np.ndarray
    perturbation: np.ndarray  # achieved norm per sample (attack's own norm)

    @property
    def clean_accuracy(self) -> float:
        return float(np.mean(self.clean_pred == self.labels))

    @property
    def robust_accuracy(self) -> float:
        return float(np.mean(self.adv_pred == self.labels))


def run_attack(params: Params, x, y, attack: AttackSpec, batch: int = 500) -> AttackResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ContractError("empty dataset")
    adv_pred, norms = [], []
    for i in range(0, len(x), batch):
        xb, yb = x[i:i + batch], y[i:i + batch]
        xa = attack.run(params, xb, yb)
        adv_pred.append(predict(params, xa))
        d = (xa - xb).reshape(len(xb), -1)
        norms.append(np.sqrt((d * d).sum(1)) if attack.kind == "l2pgd" else np.abs(d).max(1))
    return AttackResult(predict(params, x), np.concatenate(adv_pred), y, np.concatenate(norms))


def robust_accuracy(params: Params, x, y, attack: AttackSpec, batch: int = 500) -> float:
    return run_attack(params, x, y, attack, batch).robust_accuracy


def write_attack_csv(path, result: AttackResult, header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["sample_id", "label", "clean_pred", "adv_pred", "perturbation_norm"])
        for i in range(len(result.labels)):
            w.writerow([i, int(result.labels[i]), int(result.clean_pred[i]),
                        int(result.adv_pred[i]), repr(float(result.perturbation[i]))])


def with_steps(attack: AttackSpec, steps: int) -> AttackSpec:
    return replace(attack, steps=steps)
