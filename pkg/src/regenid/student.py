"""Shallow lag-vector student: regressor construction, forward pass, series prediction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Mapping, Optional

import numpy as np

from . import diffcore as dc
from .arch import LagSpec
from .errors import BoundaryError, ShapeError
from .nets import DenseLayer, GaussianHead, GaussianParams, dense_from, head_forward, head_from, mlp_forward


def _as_2d(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return s[:, None] if s.ndim == 1 else s


def build_lag_vector(u, y, t: int, spec: LagSpec) -> np.ndarray:
    """Regressor ``[u_{t-n_b} .. u_{t-1}, y_{t-n_a} .. y_{t-1}]`` (oldest first, inputs first)."""
    u, y = _as_2d(u), _as_2d(y)
    if t < spec.max_lag:
        raise BoundaryError(f"t={t} is below the largest lag {spec.max_lag}")
    if t > min(len(u), len(y)):
        raise BoundaryError(f"t={t} exceeds series length {min(len(u), len(y))}")
    return np.concatenate([u[t - spec.n_b:t].reshape(-1), y[t - spec.n_a:t].reshape(-1)])


def build_lag_matrix(u, y, spec: LagSpec, start: Optional[int] = None,
                     stop: Optional[int] = None) -> np.ndarray:
    """Rows ``build_lag_vector(u, y, t)`` for ``t`` in ``[start, stop)``."""
    u, y = _as_2d(u), _as_2d(y)
    if len(u) != len(y):
        raise ShapeError("build_lag_matrix", u.shape, y.shape, detail="series lengths differ")
    start = spec.max_lag if start is None else start
    stop = len(y) if stop is None else stop
    if start < spec.max_lag:
        raise BoundaryError(f"start={start} is below the largest lag {spec.max_lag}")
    t = np.arange(start, stop)
    blocks = [u[t - k] for k in range(spec.n_b, 0, -1)] + [y[t - k] for k in range(spec.n_a, 0, -1)]
    if not blocks or len(t) == 0:
        return np.zeros((len(t), spec.dim(u.shape[1], y.shape[1])))
    return np.concatenate(blocks, axis=1)


@dataclass
class StudentParams:
    hidden: List[DenseLayer]
    head: GaussianHead

    @property
    def in_dim(self) -> int:
        return self.hidden[0].in_dim

    @property
    def rep_dim(self) -> int:
        return self.hidden[-1].out_dim


def student_from(P: Mapping, head: GaussianHead = None) -> StudentParams:
    layers, i = [], 0
    while f"student.hidden.{i}.W" in P:
        layers.append(dense_from(P, f"student.hidden.{i}", "tanh"))
        i += 1
    return StudentParams(layers, head if head is not None else head_from(P, "head"))


def student_forward(p: StudentParams, x):
    """Representation ``phi_S = hidden(x)`` and the shared-head prediction."""
    x = x if isinstance(x, dc.Node) else dc.const(x)
    if x.value.ndim == 0 or x.shape[-1] != p.in_dim:
        raise ShapeError("student_forward", x.shape, (p.in_dim,))
    phi = mlp_forward(p.hidden, x)
    return phi, head_forward(p.head, phi)


@dataclass
class Prediction:
    """Predicted Gaussian per time step for ``t = start .. start + len(mean) - 1``."""

    start: int
    mean: np.ndarray
    var: np.ndarray
    phi: Optional[np.ndarray] = None

    @property
    def logvar(self) -> np.ndarray:
        return np.log(self.var)

    def __len__(self):
        return len(self.mean)


def predict_series(P: Mapping[str, np.ndarray], u, y, spec: LagSpec, mode: str = "one-step",
                   norm=None) -> Prediction:
    """Predict ``y_t`` for every ``t >= max_lag``.

    ``one-step`` feeds measured outputs into the regressor; ``free-run`` feeds
    back the model's own mean predictions after seeding with the first
    ``max_lag`` measured outputs. ``norm`` (a :class:`~regenid.trainer.Normalizer`)
    maps raw series into the model's units and predictions back.
    """
    u, y = _as_2d(u), _as_2d(y)
    if len(u) != len(y):
        raise ShapeError("predict_series", u.shape, y.shape, detail="series lengths differ")
    if len(y) <= spec.max_lag:
        raise BoundaryError(f"series of length {len(y)} is not longer than the largest lag {spec.max_lag}")
    if mode not in ("one-step", "free-run"):
        raise ValueError(f"mode must be 'one-step' or 'free-run', got {mode!r}")
    if norm is not None:
        u, y = norm.u(u), norm.y(y)
    p = student_from({k: dc.const(v) for k, v in P.items()})
    m = spec.max_lag
    if mode == "one-step" or spec.n_a == 0:
        phi, g = student_forward(p, build_lag_matrix(u, y, spec))
        mean, logvar, phi = g.mean.value, g.logvar.value, phi.value
    else:
        yhat = y.copy()
        n = len(y) - m
        mean = np.zeros((n, y.shape[1]))
        logvar = np.zeros_like(mean)
        phi = np.zeros((n, p.rep_dim))
        for i, t in enumerate(range(m, len(y))):
            ph, g = student_forward(p, build_lag_vector(u, yhat, t, spec))
            mean[i], logvar[i], phi[i] = g.mean.value, g.logvar.value, ph.value
            yhat[t] = mean[i]
    var = np.exp(logvar)
    if norm is not None:
        mean, var = norm.y_inverse(mean), norm.var_inverse(var)
    return Prediction(m, mean, var, phi)
