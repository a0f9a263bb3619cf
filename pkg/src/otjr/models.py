"""Fully-connected classifiers over a flat float64 parameter vector."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, Graph, Tensor, affine, relu, softplus

ACTIVATIONS = {"relu": relu, "softplus": softplus}


@dataclass(frozen=True)
class MLPSpec:
    widths: tuple
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 3:
            raise ContractError("an MLP needs input, at least one hidden layer, and output widths")
        if min(self.widths) < 1:
            raise ContractError(f"all widths must be >= 1, got {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {sorted(ACTIVATIONS)}")

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    @property
    def n_classes(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))

    def layout(self) -> list[tuple[str, tuple, slice]]:
        """(name, shape, slice into the flat vector) for W0, b0, W1, b1, ..."""
        out, pos = [], 0
        for i in range(len(self.widths) - 1):
            fan_in, fan_out = self.widths[i], self.widths[i + 1]
            n = fan_in * fan_out
            out.append((f"W{i}", (fan_out, fan_in), slice(pos, pos + n)))
            pos += n
            out.append((f"b{i}", (fan_out,), slice(pos, pos + fan_out)))
            pos += fan_out
        return out

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "activation": self.activation, "seed": self.seed}

    @classmethod
    def from_dict(cls, d) -> "MLPSpec":
        return cls(tuple(d["widths"]), d.get("activation", "relu"), int(d.get("seed", 0)))


@dataclass
class Params:
    spec: MLPSpec
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.spec.n_params,):
            raise ContractError(
                f"flat vector has {self.flat.size} values, spec needs {self.spec.n_params}")

    def views(self) -> list[np.ndarray]:
        """Per-block views sharing memory with ``flat`` (weights are (out, in))."""
        return [self.flat[sl].reshape(shape) for _, shape, sl in self.spec.layout()]

    def names(self) -> list[str]:
        return [name for name, _, _ in self.spec.layout()]

    def tensors(self, graph: Graph | None = None) -> list[Tensor]:
        if graph is None:
            return [Tensor(v) for v in self.views()]
        return [graph.variable(v) for v in self.views()]

    def copy(self) -> "Params":
        return Params(self.spec, self.flat.copy())

    def flatten_grads(self, grads) -> np.ndarray:
        return np.concatenate([np.asarray(g.data if isinstance(g, Tensor) else g).ravel()
                               for g in grads])


def init(spec: MLPSpec) -> Params:
    """Glorot-uniform weights, zero biases; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    flat = np.zeros(spec.n_params)
    for name, shape, sl in spec.layout():
        if name.startswith("W"):
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            flat[sl] = rng.uniform(-bound, bound, size=fan_out * fan_in)
    return Params(spec, flat)


@dataclass
class ForwardCache:
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)

    @property
    def logits(self) -> Tensor:
        return self.pre[-1]

    @property
    def penultimate(self) -> Tensor:
        return self.post[-1]


def forward(params: Params, x, weights: list | None = None) -> ForwardCache:
    """Run the network on a batch ``x`` of shape (B, I).

    ``weights`` overrides the parameter blocks with tensors (e.g. graph
    variables) so the pass can be differentiated w.r.t. parameters. ``x``
    may itself be a graph tensor.
    """
    spec = params.spec
    blocks = params.tensors() if weights is None else weights
    h = x if isinstance(x, Tensor) else Tensor(x)
    if h.ndim != 2 or h.shape[1] != spec.n_inputs:
        raise ContractError(f"expected input shape (B, {spec.n_inputs}), got {h.shape}")
    act = ACTIVATIONS[spec.activation]
    cache = ForwardCache()
    n_layers = len(spec.widths) - 1
    for i in range(n_layers):
        z = affine(h, blocks[2 * i], blocks[2 * i + 1])
        cache.pre.append(z)
        if i < n_layers - 1:
            h = act(z)
            cache.post.append(h)
    return cache


def logits(params: Params, x, weights=None) -> Tensor:
    return forward(params, x, weights).logits


def penultimate(params: Params, x) -> np.ndarray:
    return forward(params, x).penultimate.data


def predict(params: Params, x, batch: int = 1000) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = [np.argmax(logits(params, x[i:i + batch]).data, axis=1)
           for i in range(0, len(x), batch)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
