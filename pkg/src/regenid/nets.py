"""Layer primitives: dense layers, the GRU cell and the Gaussian output head.

Parameters live in flat ``{name: ndarray}`` mappings (see :func:`init_dense`
and friends). For a forward pass the arrays are bound to graph nodes and the
layer records below are assembled from those nodes with the ``*_from``
helpers, so the same head nodes can be handed to several sub-networks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import diffcore as dc
from .diffcore import Node
from .errors import ShapeError
from .rng import PortableRNG

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0

ACTIVATIONS = {
    "tanh": dc.tanh,
    "relu": dc.relu,
    "sigmoid": dc.sigmoid,
    "identity": lambda x: x,
}


def _val(x):
    return x.value if isinstance(x, Node) else np.asarray(x)


@dataclass
class GaussianParams:
    """Diagonal Gaussian given by mean and log-variance (nodes or arrays)."""

    mean: Node
    logvar: Node

    def __post_init__(self):
        if _val(self.mean).shape != _val(self.logvar).shape:
            raise ShapeError("GaussianParams", _val(self.mean).shape, _val(self.logvar).shape)

    @property
    def variance(self) -> np.ndarray:
        return np.exp(_val(self.logvar))


@dataclass
class DenseLayer:
    W: Node
    b: Node
    activation: str = "tanh"

    def __post_init__(self):
        W, b = _val(self.W), _val(self.b)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ShapeError("DenseLayer", W.shape, b.shape)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return _val(self.W).shape[1]

    @property
    def out_dim(self) -> int:
        return _val(self.W).shape[0]


def dense_forward(layer: DenseLayer, x) -> Node:
    """``activation(W x + b)`` for a vector or a batch of row vectors."""
    x = x if isinstance(x, Node) else dc.const(x)
    if x.value.ndim == 0 or x.shape[-1] != layer.in_dim:
        raise ShapeError("dense_forward", x.shape, _val(layer.W).shape)
    return ACTIVATIONS[layer.activation](dc.linear(x, layer.W, layer.b))


def mlp_forward(layers, x) -> Node:
    for layer in layers:
        x = dense_forward(layer, x)
    return x


@dataclass
class GruCell:
    Wz: Node
    Wr: Node
    Wh: Node
    Uz: Node
    Ur: Node
    Uh: Node
    bz: Node
    br: Node
    bh: Node

    def __post_init__(self):
        H, n_in = _val(self.Wz).shape
        for name in ("Wr", "Wh"):
            if _val(getattr(self, name)).shape != (H, n_in):
                raise ShapeError("GruCell", (H, n_in), _val(getattr(self, name)).shape)
        for name in ("Uz", "Ur", "Uh"):
            if _val(getattr(self, name)).shape != (H, H):
                raise ShapeError("GruCell", (H, H), _val(getattr(self, name)).shape)
        for name in ("bz", "br", "bh"):
            if _val(getattr(self, name)).shape != (H,):
                raise ShapeError("GruCell", (H,), _val(getattr(self, name)).shape)

    @property
    def hidden_dim(self) -> int:
        return _val(self.Wz).shape[0]

    @property
    def input_dim(self) -> int:
        return _val(self.Wz).shape[1]


def gru_step(cell: GruCell, x, h_prev) -> Node:
    """One GRU update.

    ``g = sigmoid(Wz x + Uz h + bz)``, ``r = sigmoid(Wr x + Ur h + br)``,
    ``c = tanh(Wh x + Uh (r*h) + bh)`` and ``h' = (1 - g) * h + g * c``.
    """
    x = x if isinstance(x, Node) else dc.const(x)
    h_prev = h_prev if isinstance(h_prev, Node) else dc.const(h_prev)
    if x.value.ndim == 0 or x.shape[-1] != cell.input_dim:
        raise ShapeError("gru_step", x.shape, _val(cell.Wz).shape, detail="input")
    if h_prev.shape[-1:] != (cell.hidden_dim,) or h_prev.shape[:-1] != x.shape[:-1]:
        raise ShapeError("gru_step", h_prev.shape, _val(cell.Uz).shape, detail="hidden state")
    g = dc.sigmoid(dc.add(dc.linear(x, cell.Wz, cell.bz), dc.linear(h_prev, cell.Uz)))
    r = dc.sigmoid(dc.add(dc.linear(x, cell.Wr, cell.br), dc.linear(h_prev, cell.Ur)))
    c = dc.tanh(dc.add(dc.linear(x, cell.Wh, cell.bh), dc.linear(dc.mul(r, h_prev), cell.Uh)))
    return dc.add(dc.mul(dc.sub(1.0, g), h_prev), dc.mul(g, c))


@dataclass
class GaussianHead:
    mean: DenseLayer
    logvar: DenseLayer

    def __post_init__(self):
        if self.mean.in_dim != self.logvar.in_dim or self.mean.out_dim != self.logvar.out_dim:
            raise ShapeError("GaussianHead", _val(self.mean.W).shape, _val(self.logvar.W).shape)

    @property
    def in_dim(self) -> int:
        return self.mean.in_dim


def head_forward(head: GaussianHead, phi) -> GaussianParams:
    """Map a representation to (mean, clamped log-variance)."""
    phi = phi if isinstance(phi, Node) else dc.const(phi)
    if phi.value.ndim == 0 or phi.shape[-1] != head.in_dim:
        raise ShapeError("head_forward", phi.shape, _val(head.mean.W).shape)
    mu = dense_forward(head.mean, phi)
    logvar = dc.clip(dense_forward(head.logvar, phi), LOGVAR_MIN, LOGVAR_MAX)
    return GaussianParams(mu, logvar)


# ---------------------------------------------------------------- parameters

def uniform_init(rng: PortableRNG, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(shape, -bound, bound)


def init_dense(P: dict, prefix: str, n_in: int, n_out: int, rng: PortableRNG) -> None:
    P[f"{prefix}.W"] = uniform_init(rng, (n_out, n_in), n_in)
    P[f"{prefix}.b"] = uniform_init(rng, (n_out,), n_in)


def init_gru(P: dict, prefix: str, n_in: int, n_hidden: int, rng: PortableRNG) -> None:
    for gate in ("z", "r", "h"):
        P[f"{prefix}.W{gate}"] = uniform_init(rng, (n_hidden, n_in), n_in)
    for gate in ("z", "r", "h"):
        P[f"{prefix}.U{gate}"] = uniform_init(rng, (n_hidden, n_hidden), n_hidden)
    for gate in ("z", "r", "h"):
        P[f"{prefix}.b{gate}"] = uniform_init(rng, (n_hidden,), n_in)


def init_head(P: dict, prefix: str, n_in: int, n_out: int, rng: PortableRNG) -> None:
    init_dense(P, f"{prefix}.mean", n_in, n_out, rng)
    init_dense(P, f"{prefix}.logvar", n_in, n_out, rng)


def dense_from(P: Mapping, prefix: str, activation: str = "tanh") -> DenseLayer:
    return DenseLayer(P[f"{prefix}.W"], P[f"{prefix}.b"], activation)


def gru_from(P: Mapping, prefix: str) -> GruCell:
    return GruCell(**{k: P[f"{prefix}.{k}"] for k in GRU_KEYS})


def head_from(P: Mapping, prefix: str) -> GaussianHead:
    return GaussianHead(dense_from(P, f"{prefix}.mean", "identity"),
                        dense_from(P, f"{prefix}.logvar", "identity"))


GRU_KEYS = ("Wz", "Wr", "Wh", "Uz", "Ur", "Uh", "bz", "br", "bh")


def bind(P: Mapping[str, np.ndarray]) -> dict:
    """Wrap every array as a trainable leaf node (one fresh graph per call)."""
    return {k: dc.param(v, name=k) for k, v in P.items()}


def count_params(P: Mapping[str, np.ndarray], prefixes=None) -> int:
    return int(sum(v.size for k, v in P.items()
                   if prefixes is None or any(k.startswith(p) for p in prefixes)))
