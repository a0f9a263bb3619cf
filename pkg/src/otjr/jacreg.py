"""Input-output Jacobian estimates and the direction-guided Jacobian penalty."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (ContractError, Graph, NumericError, Tensor, inner, mean,
                       square, sum as tsum)
from .models import Params, forward, logits
from .transport import sample_projections


@dataclass
class JacobianEstimate:
    value: float
    projections: np.ndarray  # (n_proj, C) or (B, n_proj, C)
    per_sample: np.ndarray  # (B,)


def as_model(model):
    """Params, or any callable mapping a (B, I) tensor to (B, C) logits."""
    if isinstance(model, Params):
        return lambda xv: logits(model, xv)
    if callable(model):
        return model
    raise ContractError("model must be Params or a callable")


def full_jacobian(model, x) -> np.ndarray:
    """Exact (C, I) Jacobian of the logits at a single input, one backward per class."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    g = Graph()
    xv = g.variable(x)
    z = as_model(model)(xv)
    C = z.shape[1]
    rows = []
    for c in range(C):
        e = np.zeros((1, C))
        e[0, c] = 1.0
        (gx,) = g.grad(tsum(inner(z, e)), [xv])
        rows.append(gx.data[0])
    J = np.stack(rows)
    if not np.all(np.isfinite(J)):
        raise NumericError("non-finite Jacobian entry")
    return J


def projected_input_grads(model, x, directions) -> np.ndarray:
    """Rows of d(v_i . z_i)/dx_i for per-sample directions (B, C), no tape kept."""
    x = np.asarray(x, dtype=np.float64)
    g = Graph()
    xv = g.variable(x)
    z = as_model(model)(xv)
    (gx,) = g.grad(tsum(inner(z, np.asarray(directions, dtype=np.float64))), [xv])
    return gx.data


def frob_estimate_random(model, x, n_proj: int = 1,
                         rng: np.random.Generator | None = None,
                         projections=None, chunk: int = 65536) -> JacobianEstimate:
    """Monte Carlo estimate of ||J(x)||_F^2 from random unit directions.

    Each sample gets its own ``n_proj`` directions (or the shared
    ``projections`` array of shape (n_proj, C)). The estimate is
    ``C / n_proj * sum_j ||d(v_j . z)/dx||^2``, which is unbiased. Inputs
    are tiled so all directions go through one backward pass per chunk of
    ``chunk`` rows.
    """
    if n_proj < 1:
        raise ContractError("n_proj must be >= 1")
    f = as_model(model)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    B = len(x)
    C = f(Tensor(x[:1])).shape[1]
    if projections is not None:
        V = np.asarray(projections, dtype=np.float64).reshape(-1, C)
        n_proj = len(V)
        V = np.broadcast_to(V, (B, n_proj, C))
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        V = sample_projections(B * n_proj, C, rng=rng).vectors.reshape(B, n_proj, C)
    rows_x = np.repeat(x, n_proj, axis=0)
    rows_v = V.reshape(B * n_proj, C)
    sq = np.empty(B * n_proj)
    for i in range(0, len(rows_x), chunk):
        gx = projected_input_grads(f, rows_x[i:i + chunk], rows_v[i:i + chunk])
        sq[i:i + chunk] = (gx * gx).sum(1)
    per_sample = C * sq.reshape(B, n_proj).mean(1)
    return JacobianEstimate(float(per_sample.mean()), np.array(V), per_sample)


def jr_terms(params: Params, weights: list, x, directions) -> Tensor:
    """Per-sample ||d(sigma_i . z_i)/dx_i||^2 as a tensor differentiable in ``weights``.

    ``weights`` are graph variables for the parameter blocks; ``directions``
    is a constant (B, C) array (rows of zeros contribute zero).
    """
    if not weights or weights[0].graph is None:
        raise ContractError("jr_terms needs parameter blocks bound to a graph")
    graph = weights[0].graph
    sigma = np.asarray(directions, dtype=np.float64)
    xv = graph.variable(np.asarray(x, dtype=np.float64))
    z = forward(params, xv, weights).logits
    if sigma.shape != z.shape:
        raise ContractError(f"directions must be {z.shape}, got {sigma.shape}")
    (gx,) = graph.grad(tsum(inner(z, sigma)), [xv], record=True)
    return tsum(square(gx), axis=1)


def jr_term(params: Params, weights: list, x, directions) -> Tensor:
    """Batch mean of :func:`jr_terms`."""
    return mean(jr_terms(params, weights, x, directions))


def jr_value(model, x, directions) -> np.ndarray:
    """Numeric per-sample penalty without a parameter tape."""
    gx = projected_input_grads(model, x, directions)
    return (gx * gx).sum(1)
