"""Analysis tables computed from a trained model.

Each function returns a :class:`DiagnosticReport`: a rectangular float
table plus column labels and metadata, written to CSV by :meth:`write_csv`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .attacks import AttackSpec, input_gradient, run_attack
from .autodiff import ContractError, Graph, cross_entropy, mean
from .models import Params, forward, predict, penultimate

REQUIRED_COLUMNS = {
    "activation": ["channel", "clean", "adversarial"],
    "inputgrad": ["iterations", "mean_l1_per_input"],
    "ratio": ["block", "ratio", "flagged"],
    "boundary": None,  # grid: one column per b offset
    "sanity": ["axis", "value", "robust_acc", "monotone"],
}


@dataclass
class DiagnosticReport:
    kind: str
    columns: list
    table: np.ndarray
    meta: dict = field(default_factory=dict)
    row_labels: list | None = None

    def __post_init__(self):
        self.table = np.atleast_2d(np.asarray(self.table, dtype=np.float64))
        if self.table.shape[1] != len(self.columns):
            raise ContractError(f"{self.kind}: {self.table.shape[1]} columns, {len(self.columns)} labels")
        req = REQUIRED_COLUMNS.get(self.kind)
        if req is not None and list(self.columns) != req:
            raise ContractError(f"{self.kind} report needs columns {req}")

    def column(self, name) -> np.ndarray:
        return self.table[:, list(self.columns).index(name)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            meta = " ".join(f"{k}={v}" for k, v in sorted(self.meta.items()))
            fh.write(f"# kind={self.kind} {meta}\n")
            w = csv.writer(fh)
            w.writerow(list(self.columns))
            for row in self.table:
                w.writerow([repr(float(v)) for v in row])


def _check_pair(a, b):
    if len(a) == 0:
        raise ContractError("empty batch")
    if np.shape(a) != np.shape(b):
        raise ContractError("clean and adversarial batches are not aligned")


def activation_profile(params: Params, x_clean, x_adv, meta=None) -> DiagnosticReport:
    """Mean |activation| per penultimate channel, sorted by the clean magnitude."""
    _check_pair(x_clean, x_adv)
    c = np.abs(penultimate(params, x_clean)).mean(0)
    a = np.abs(penultimate(params, x_adv)).mean(0)
    order = np.argsort(-c, kind="stable")
    tab = np.stack([order.astype(float), c[order], a[order]], 1)
    return DiagnosticReport("activation", REQUIRED_COLUMNS["activation"], tab, dict(meta or {}))


def input_grad_l1(params: Params, x, y, ladder=("clean", 1, 5, 10, 15, 20), eps: float = 0.1,
                  step: float | None = None, meta=None) -> DiagnosticReport:
    """Mean over samples of ||grad_x XE||_1 / I at PGD iterates along ``ladder``.

    Each ladder entry is an iteration count (``"clean"`` or 0 for none);
    the attack step defaults to eps/4.
    """
    x = np.asarray(x, dtype=np.float64)
    rows = []
    for entry in ladder:
        its = 0 if entry in ("clean", 0, None) else int(entry)
        xa = x if its == 0 else AttackSpec("pgd", eps, its, step).run(params, x, y)
        g = input_gradient(params, xa, y)
        rows.append([its, float(np.abs(g).sum(1).mean() / x.shape[1])])
    return DiagnosticReport("inputgrad", REQUIRED_COLUMNS["inputgrad"], rows, dict(meta or {}))


def _block_grads(params: Params, x, y):
    g = Graph()
    w = params.tensors(g)
    loss = mean(cross_entropy(forward(params, x, w).logits, y))
    return [t.data for t in g.grad(loss, w)]


def layer_grad_ratio(params: Params, x_clean, x_adv, y, tiny: float = 1e-12,
                     meta=None) -> DiagnosticReport:
    """Per parameter block, mean over samples of ||grad L(x_adv)|| / ||grad L(x)||.

    Samples whose clean gradient norm is below ``tiny`` are skipped for that
    block; a block with no usable sample is flagged and reported as NaN-free 0.
    """
    _check_pair(x_clean, x_adv)
    x_clean = np.asarray(x_clean, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    y = np.asarray(y)
    nb = len(params.spec.layout())
    ratios = [[] for _ in range(nb)]
    for i in range(len(y)):
        gc = _block_grads(params, x_clean[i:i + 1], y[i:i + 1])
        ga = _block_grads(params, x_adv[i:i + 1], y[i:i + 1])
        for b in range(nb):
            den = np.linalg.norm(gc[b])
            if den >= tiny:
                ratios[b].append(np.linalg.norm(ga[b]) / den)
    rows = []
    for b in range(nb):
        flagged = len(ratios[b]) == 0
        rows.append([b, 0.0 if flagged else float(np.mean(ratios[b])), float(flagged)])
    meta = dict(meta or {}, blocks="|".join(params.names()))
    return DiagnosticReport("ratio", REQUIRED_COLUMNS["ratio"], rows, meta)


def _orthonormal(d1, d2):
    d1 = np.asarray(d1, dtype=np.float64).ravel()
    d2 = np.asarray(d2, dtype=np.float64).ravel()
    n1 = np.linalg.norm(d1)
    if n1 == 0:
        raise ContractError("first direction is zero")
    u1 = d1 / n1
    r = d2 - (d2 @ u1) * u1
    n2 = np.linalg.norm(r)
    if n2 < 1e-12:
        raise ContractError("directions are parallel")
    return u1, r / n2


def boundary_slice(params: Params, x, d1, d2, half_width: float, resolution: int,
                   meta=None) -> DiagnosticReport:
    """Predicted class over x + a*u1 + b*u2 on a square grid; rows index a, columns b.

    Grid offsets are ``linspace(-w, w, resolution)``; with odd resolution
    the centre cell is exactly the anchor. Points are not clamped to [0, 1].
    """
    if resolution < 2:
        raise ContractError("resolution must be >= 2")
    x = np.asarray(x, dtype=np.float64).ravel()
    u1, u2 = _orthonormal(d1, d2)
    offs = np.linspace(-half_width, half_width, resolution)
    A, Bm = np.meshgrid(offs, offs, indexing="ij")
    pts = x[None, :] + A.reshape(-1, 1) * u1 + Bm.reshape(-1, 1) * u2
    grid = predict(params, pts).reshape(resolution, resolution).astype(float)
    cols = [f"b={o!r}" for o in offs]
    anchor = int(predict(params, x[None, :])[0])
    meta = dict(meta or {}, anchor_class=anchor, half_width=half_width, resolution=resolution)
    return DiagnosticReport("boundary", cols, grid, meta, row_labels=list(offs))


def anchor_region_radius(report: DiagnosticReport) -> float:
    """Radius of the disc with the same area as the anchor's connected class region."""
    grid = report.table
    res = grid.shape[0]
    anchor = report.meta["anchor_class"]
    lab, _ = ndimage.label(grid == anchor)
    c = res // 2
    comp = lab[c, c]
    if comp == 0:
        return 0.0
    cell = (2 * report.meta["half_width"] / (res - 1)) ** 2
    return float(np.sqrt((lab == comp).sum() * cell / np.pi))


def sanity_suite(params: Params, x, y, steps=(1, 10, 20, 40, 50), eps_fixed: float = 0.1,
                 eps_ladder=(0.0, 0.05, 0.1, 0.2, 0.35, 0.5), ladder_steps: int = 20,
                 step_frac: float = 0.25, meta=None) -> DiagnosticReport:
    """Robust accuracy against PGD step count (fixed eps) and against eps (PGD-20).

    axis 0 rows vary steps, axis 1 rows vary eps. ``monotone`` is 1 when the
    row's accuracy does not exceed the previous row on the same axis.
    """
    rows = []
    prev = None
    for s in steps:
        acc = run_attack(params, x, y, AttackSpec("pgd", eps_fixed, s, eps_fixed * step_frac)).robust_accuracy
        rows.append([0, s, acc, float(prev is None or acc <= prev)])
        prev = acc
    prev = None
    for e in eps_ladder:
        acc = run_attack(params, x, y, AttackSpec("pgd", e, ladder_steps, max(e, 1e-12) * step_frac)).robust_accuracy
        rows.append([1, e, acc, float(prev is None or acc <= prev)])
        prev = acc
    meta = dict(meta or {}, eps_fixed=eps_fixed, ladder_steps=ladder_steps)
    return DiagnosticReport("sanity", REQUIRED_COLUMNS["sanity"], rows, meta)
