"""Self-check suite: exact oracles against the fast paths.

Each check returns an :class:`OracleRow`. :func:`run_oracle` runs them all
with fixed seeds, so a fresh build should report every row as passing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, fgsm, pgd
from .autodiff import Graph
from .jacreg import full_jacobian, jr_term
from .models import MLPSpec, Params, init, logits
from .training import VARIANTS, LossSpec, batch_objective
from .transport import (brute_force_ot, exact_w1_1d, sample_projections, sinkhorn,
                        sliced_w1)


@dataclass
class OracleRow:
    name: str
    passed: bool
    value: float
    tol: float
    detail: str = ""


def flat_gradcheck(spec: MLPSpec, flat, objective, h: float = 1e-5, floor: float = 1e-8):
    """Max relative error between the tape gradient of ``objective(params, weights)``
    over all parameters and central differences. Returns (error, analytic, numeric)."""
    flat = np.asarray(flat, dtype=np.float64)
    p = Params(spec, flat.copy())
    g = Graph()
    w = p.tensors(g)
    ana = p.flatten_grads(g.grad(objective(p, w), w))

    def value(v):
        q = Params(spec, v)
        return objective(q, q.tensors(Graph())).item()

    num = np.empty_like(flat)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        num[i] = (value(flat + e) - value(flat - e)) / (2 * h)
    rel = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
    return float(rel.max()), ana, num


def _toy_batch(spec: MLPSpec, B: int, seed: int):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 0.9, size=(B, spec.n_inputs))
    y = np.arange(B) % spec.n_classes
    x_adv = np.clip(x + rng.uniform(-0.1, 0.1, size=x.shape), 0, 1)
    return x, y, x_adv


def loss_objective(spec: MLPSpec, variant: str, x, y, x_adv, seed: int = 1,
                   lambda_j: float = 0.3, lambda_sw: float = 0.7, K: int = 4):
    """Objective closure with projections reseeded per call and JR directions held fixed."""
    ls = LossSpec(variant, lambda_j=lambda_j, lambda_sw=lambda_sw, K=K)
    p0 = init(spec)
    g = Graph()
    frozen = batch_objective(p0, p0.tensors(g), x, y, x_adv, ls, np.random.default_rng(seed)).directions

    def obj(p, w):
        return batch_objective(p, w, x, y, x_adv, ls, np.random.default_rng(seed), frozen).total
    return obj


def check_gradcheck_losses(widths=(2, 4, 3), seed: int = 0, tol: float = 1e-4) -> OracleRow:
    spec = MLPSpec(tuple(widths), "softplus", seed)
    x, y, x_adv = _toy_batch(spec, 5, seed)
    flat = init(spec).flat
    worst, bad = 0.0, []
    for v in VARIANTS:
        err, _, _ = flat_gradcheck(spec, flat, loss_objective(spec, v, x, y, x_adv))
        worst = max(worst, err)
        if err >= tol:
            bad.append(v)
    name = f"gradcheck all losses {'-'.join(map(str, widths))}"
    return OracleRow(name, not bad, worst, tol, ",".join(bad))


def check_gradcheck_jr(widths=(2, 4, 3), seed: int = 0, tol: float = 1e-4) -> OracleRow:
    """Second order: the parameter gradient of the JR term runs through a recorded backward."""
    spec = MLPSpec(tuple(widths), "softplus", seed)
    x, _, _ = _toy_batch(spec, 4, seed)
    sig = sample_projections(4, spec.n_classes, seed=seed + 7).vectors
    err, _, _ = flat_gradcheck(spec, init(spec).flat, lambda p, w: jr_term(p, w, x, sig))
    name = f"second-order gradcheck jr_term {'-'.join(map(str, widths))}"
    return OracleRow(name, err < tol, err, tol)


def check_jr_basis(seed: int = 0, tol: float = 1e-9) -> OracleRow:
    """Summing the JR term over an orthonormal basis recovers ||J||_F^2."""
    spec = MLPSpec((3, 6, 4), "softplus", seed)
    p = init(spec)
    x = np.random.default_rng(seed).uniform(size=(1, 3))
    exact = float((full_jacobian(p, x) ** 2).sum())
    Q, _ = np.linalg.qr(np.random.default_rng(seed + 1).normal(size=(4, 4)))
    total = 0.0
    for k in range(4):
        g = Graph()
        total += jr_term(p, p.tensors(g), x, Q[k][None, :]).item()
    err = abs(total - exact) / exact
    return OracleRow("jr over orthonormal basis vs ||J||_F^2", err < tol, err, tol, "relative")


def check_sw_1d(seed: int = 0, trials: int = 50, tol: float = 1e-12) -> OracleRow:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        B = int(rng.integers(1, 12))
        a, b = rng.normal(size=(B, 1)), rng.normal(size=(B, 1))
        worst = max(worst, abs(sliced_w1(a, b, sample_projections(1, 1, rng=rng)) - exact_w1_1d(a, b)))
    return OracleRow("sliced_w1 C=1 vs exact 1-D", worst <= tol, worst, tol)


def check_sw_bound(seed: int = 0, trials: int = 50, K: int = 2000, tol: float = 1e-9) -> OracleRow:
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(trials):
        B = int(rng.integers(2, 7))
        a, b = rng.normal(size=(B, 3)), rng.normal(size=(B, 3))
        worst = max(worst, sliced_w1(a, b, sample_projections(K, 3, rng=rng)) - brute_force_ot(a, b))
    return OracleRow("sliced_w1 <= brute-force W1", worst <= tol, worst, tol, "max(sw - ot)")


def check_sinkhorn(seed: int = 0, trials: int = 20, entropy: float = 1e-3, tol: float = 0.02) -> OracleRow:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        B = int(rng.integers(2, 7))
        a, b = rng.normal(size=(B, 3)), rng.normal(size=(B, 3))
        ot = brute_force_ot(a, b)
        worst = max(worst, abs(sinkhorn(a, b, entropy).cost - ot) / ot)
    return OracleRow("sinkhorn(1e-3) vs brute-force W1", worst <= tol, worst, tol, "relative")


def check_pgd_fgsm(seed: int = 0) -> OracleRow:
    spec = MLPSpec((6, 10, 4), "relu", seed)
    p = init(spec)
    x, y, _ = _toy_batch(spec, 16, seed)
    a = fgsm(p, x, y, 0.1)
    b = pgd(p, x, y, AttackConfig(eps=0.1, step=0.1, steps=1))
    same = bool(np.array_equal(a, b))
    return OracleRow("pgd(P=1, step=eps) == fgsm", same, float(np.abs(a - b).max()), 0.0, "bit-exact")


def check_taylor(seed: int = 0) -> OracleRow:
    """Remainder of the first-order expansion shrinks quadratically."""
    spec = MLPSpec((5, 12, 3), "softplus", seed)
    p = init(spec)
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(1, 5))
    d = rng.normal(size=(1, 5))
    d /= np.linalg.norm(d)
    J = full_jacobian(p, x)
    f0 = logits(p, x).data[0]
    scales = 10.0 ** -np.arange(1, 5)
    r = [np.linalg.norm(logits(p, x + s * d).data[0] - f0 - J @ (s * d[0])) for s in scales]
    slope = float(np.polyfit(np.log(scales), np.log(r), 1)[0])
    return OracleRow("Taylor remainder slope", 1.8 <= slope <= 2.2, slope, 0.2, "expect 2")


CHECKS = (check_sw_1d, check_sw_bound, check_sinkhorn, check_pgd_fgsm, check_jr_basis,
          check_gradcheck_jr, check_gradcheck_losses, check_taylor)


def run_oracle() -> list[OracleRow]:
    return [c() for c in CHECKS]


def format_table(rows) -> str:
    w = max(len(r.name) for r in rows)
    lines = [f"{'check':<{w}}  result  value        tol"]
    for r in rows:
        lines.append(f"{r.name:<{w}}  {'PASS' if r.passed else 'FAIL':<6}  {r.value:<11.3e}  {r.tol:g}"
                     + (f"  {r.detail}" if r.detail else ""))
    return "\n".join(lines)
