"""Joint training of teacher, student and shared head.

The minimized quantity per minibatch of ``B`` windows of ``T`` steps is::

    1/(T B) * sum_{t,b} [ a1 * NLL(y | head(phi_S))
                          + a2 * (NLL(y | head(phi_T)) + KL(q || prior))
                          + a3 * align(phi_T, phi_S) ]

A baseline model is the lag-vector network alone trained on the first term.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import diffcore as dc
from .arch import LossWeights, ModelSpec, init_params, is_subset_arch, param_count
from .benchmarks import IoDataset
from .errors import ConfigError, DivergenceError, NonFiniteError, ShapeError
from .nets import bind, head_from
from .rng import STREAM_EPS, STREAM_SHUFFLE, STREAM_VAL_EPS, PortableRNG, derive_seed
from .student import Prediction, build_lag_matrix, predict_series, student_forward, student_from
from .teacher import TeacherOutputs, nll_gaussian, teacher_forward, teacher_representation

log = logging.getLogger(__name__)

__all__ = [
    "LossWeights", "TrainConfig", "Normalizer", "TrainedPair", "AdamState", "align_loss",
    "joint_loss", "adam_step", "fit", "fit_ensemble", "grid_search", "ensemble_average",
]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 200
    patience: int = 10
    seq_len: int = 64
    batch_size: int = 32
    seed: int = 0
    align: str = "distance"

    def __post_init__(self):
        for name in ("lr", "eps", "max_epochs", "patience", "seq_len", "batch_size"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"train.{name} must be positive, got {getattr(self, name)}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.align not in ("distance", "correlation"):
            raise ConfigError(f"train.align must be 'distance' or 'correlation', got {self.align!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Normalizer:
    """Affine standardization fitted on the training split."""

    u_mean: float
    u_std: float
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, u, y) -> "Normalizer":
        u, y = np.asarray(u, dtype=np.float64), np.asarray(y, dtype=np.float64)
        with np.errstate(over="ignore", invalid="ignore"):
            us, ys = float(u.std()), float(y.std())
        if not np.isfinite([us, ys]).all():
            raise NonFiniteError("training data are too large to standardize (standard deviation overflows)")
        return cls(float(u.mean()), us if us > 0 else 1.0, float(y.mean()), ys if ys > 0 else 1.0)

    @classmethod
    def identity(cls) -> "Normalizer":
        return cls(0.0, 1.0, 0.0, 1.0)

    def u(self, x):
        return (np.asarray(x, dtype=np.float64) - self.u_mean) / self.u_std

    def y(self, x):
        return (np.asarray(x, dtype=np.float64) - self.y_mean) / self.y_std

    def y_inverse(self, x):
        return np.asarray(x) * self.y_std + self.y_mean

    def var_inverse(self, v):
        return np.asarray(v) * self.y_std ** 2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainedPair:
    """Outcome of :func:`fit`: parameters (teacher, student, shared head), history, settings."""

    params: dict
    spec: ModelSpec
    config: TrainConfig
    norm: Normalizer
    history: List[dict] = field(default_factory=list)
    best_epoch: int = -1

    def _subset(self, prefix):
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    @property
    def teacher_params(self) -> dict:
        return self._subset("teacher.")

    @property
    def student_params(self) -> dict:
        return self._subset("student.")

    @property
    def head_params(self) -> dict:
        return self._subset("head.")

    def n_params(self, part="student") -> int:
        return param_count(self.params, part)

    def predict(self, u, y, mode: str = "one-step") -> Prediction:
        return predict_series(self.params, u, y, self.spec.lags, mode, self.norm)

    def teacher_phi(self, y) -> np.ndarray:
        """Teacher representation over a raw output series (posterior-mean latents)."""
        if not self.spec.has_teacher:
            raise ConfigError("baseline models have no teacher")
        return teacher_representation(self.params, self.norm.y(y))


# ---------------------------------------------------------------- loss pieces

def align_loss(phi_T, phi_S, variant: str = "distance") -> dc.Node:
    """Squared distance ``sum (phi_T - phi_S)^2`` or correlation ``-sum phi_T * phi_S``."""
    phi_T = phi_T if isinstance(phi_T, dc.Node) else dc.const(phi_T)
    phi_S = phi_S if isinstance(phi_S, dc.Node) else dc.const(phi_S)
    if phi_T.shape != phi_S.shape:
        raise ShapeError("align_loss", phi_T.shape, phi_S.shape)
    if variant == "distance":
        return dc.sum_(dc.square(dc.sub(phi_T, phi_S)))
    if variant == "correlation":
        return dc.neg(dc.sum_(dc.mul(phi_T, phi_S)))
    raise ValueError(f"unknown alignment variant {variant!r}")


def joint_loss(teacher: Optional[TeacherOutputs], student, y_rows, w: LossWeights,
               variant: str = "distance", parts: Optional[dict] = None) -> dc.Node:
    """Weighted loss averaged over all rows (time steps x windows).

    ``student`` is ``(phi_S, GaussianParams)`` from :func:`student_forward` and
    ``y_rows`` the targets in the same row order as the teacher outputs.
    """
    phi_S, pred_S = student
    y_rows = np.asarray(y_rows, dtype=np.float64)
    n = y_rows.shape[0]
    if phi_S.shape[0] != n:
        raise ShapeError("joint_loss", phi_S.shape, y_rows.shape, detail="row counts differ")
    if teacher is not None and teacher.phi.shape[0] != n:
        raise ShapeError("joint_loss", teacher.phi.shape, y_rows.shape, detail="row counts differ")
    if teacher is None and (w.alpha2 > 0 or w.alpha3 > 0):
        raise ConfigError("teacher outputs are required when alpha2 or alpha3 is positive")
    terms = []
    nll_s = nll_gaussian(y_rows, pred_S)
    if parts is not None:
        parts["student_nll"] = float(nll_s.value) / n
    if w.alpha1 > 0:
        terms.append(dc.mul(nll_s, w.alpha1))
    if teacher is not None:
        elbo = dc.add(nll_gaussian(y_rows, teacher.decoded), teacher.kl)
        align = align_loss(teacher.phi, phi_S, variant)
        if parts is not None:
            parts["teacher_nelbo"] = float(elbo.value) / n
            parts["align"] = float(align.value) / n
        if w.alpha2 > 0:
            terms.append(dc.mul(elbo, w.alpha2))
        if w.alpha3 > 0:
            terms.append(dc.mul(align, w.alpha3))
    total = terms[0]
    for t in terms[1:]:
        total = dc.add(total, t)
    return dc.mul(total, 1.0 / n)


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict, lr: float):
    """Bias-corrected Adam update applied in place to ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError("adam_step", p.shape, g.shape, detail=name)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state, params


# ---------------------------------------------------------------- data plumbing

@dataclass
class _Prepared:
    us: np.ndarray
    ys: np.ndarray
    X: np.ndarray          # lag rows for t = max_lag .. N-1
    max_lag: int
    train_starts: np.ndarray
    val_starts: np.ndarray


def window_starts(rng, seq_len: int, max_lag: int) -> np.ndarray:
    a, b = rng
    a = max(a, max_lag)
    return np.arange(a, b - seq_len + 1, seq_len, dtype=np.int64)


def _prepare(data: IoDataset, spec: ModelSpec, cfg: TrainConfig, norm: Normalizer) -> _Prepared:
    us = norm.u(data.u).reshape(len(data), -1)
    ys = norm.y(data.y).reshape(len(data), -1)
    m = spec.lags.max_lag
    X = build_lag_matrix(us, ys, spec.lags)
    tr = window_starts(data.split["train"], cfg.seq_len, m)
    va = window_starts(data.split["val"], cfg.seq_len, m)
    if len(tr) == 0:
        raise ConfigError(
            f"training range {data.split['train']} is too short for windows of {cfg.seq_len} after lag {m}")
    if len(va) == 0:
        raise ConfigError(
            f"validation range {data.split['val']} is too short for windows of {cfg.seq_len} after lag {m}")
    return _Prepared(us, ys, X, m, tr, va)


def _gather(prep: _Prepared, starts: np.ndarray, T: int):
    tt = starts[None, :] + np.arange(T)[:, None]          # (T, B)
    y_win = prep.ys[tt]                                    # (T, B, dy)
    X_rows = prep.X[(tt - prep.max_lag).reshape(-1)]
    Y_rows = y_win.reshape(-1, y_win.shape[-1])
    return y_win, X_rows, Y_rows


def build_loss(nodes: dict, spec: ModelSpec, variant: str, y_win, X_rows, Y_rows, eps,
               parts: Optional[dict] = None, kernels=None) -> dc.Node:
    """Assemble the minibatch loss from bound parameter nodes."""
    head = head_from(nodes, "head")
    student = student_forward(student_from(nodes, head), X_rows)
    teacher = None
    w = spec.weights
    if spec.has_teacher and (w.alpha2 > 0 or w.alpha3 > 0):
        teacher = teacher_forward(nodes, y_win, eps, head, kernels)
    elif not spec.has_teacher:
        w = LossWeights(w.alpha1, 0.0, 0.0)
    return joint_loss(teacher, student, Y_rows, w, variant, parts)


def loss_and_grads(params: dict, spec: ModelSpec, variant: str, y_win, X_rows, Y_rows, eps,
                   kernels=None):
    nodes = bind(params)
    parts = {}
    loss = build_loss(nodes, spec, variant, y_win, X_rows, Y_rows, eps, parts, kernels)
    dc.backward(loss)
    return float(loss.value), {k: n.grad for k, n in nodes.items()}, parts


# ---------------------------------------------------------------- fitting

def fit(data: IoDataset, spec: ModelSpec, cfg: TrainConfig = TrainConfig(),
        callback: Optional[Callable[[dict], None]] = None) -> TrainedPair:
    """Train with minibatches of contiguous windows and early stopping on validation loss.

    Teacher windows start from a zero state; the student sees lag vectors at
    the same time indices. Returns the parameters of the best validation epoch.
    """
    a, b = data.split["train"]
    norm = Normalizer.fit(data.u[a:b], data.y[a:b])
    prep = _prepare(data, spec, cfg, norm)
    params = init_params(spec, cfg.seed)
    T = cfg.seq_len
    dz = spec.z_dim if spec.has_teacher else 0
    shuffle_rng = PortableRNG(cfg.seed, STREAM_SHUFFLE)
    eps_rng = PortableRNG(cfg.seed, STREAM_EPS)
    val_eps = PortableRNG(cfg.seed, STREAM_VAL_EPS).normal((T, len(prep.val_starts), max(dz, 1)))[:, :, :dz]
    val_y, val_X, val_Y = _gather(prep, prep.val_starts, T)
    adam = AdamState(cfg.beta1, cfg.beta2, cfg.eps)
    history = []
    best, best_params, best_epoch, stale = np.inf, None, -1, 0
    n_train = len(prep.train_starts)
    for epoch in range(cfg.max_epochs):
        order = prep.train_starts[shuffle_rng.permutation(n_train)]
        total, count = 0.0, 0
        for i in range(0, n_train, cfg.batch_size):
            starts = order[i:i + cfg.batch_size]
            y_win, X_rows, Y_rows = _gather(prep, starts, T)
            eps = eps_rng.normal((T, len(starts), dz)) if dz else np.zeros((T, len(starts), 0))
            loss, grads, _ = loss_and_grads(params, spec, cfg.align, y_win, X_rows, Y_rows, eps)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            try:
                adam_step(adam, params, grads, cfg.lr)
            except NonFiniteError as exc:
                raise DivergenceError(epoch, str(exc)) from None
            total += loss * len(starts)
            count += len(starts)
        parts = {}
        val = float(build_loss({k: dc.const(v) for k, v in params.items()}, spec, cfg.align,
                               val_y, val_X, val_Y, val_eps, parts).value)
        if not np.isfinite(val):
            raise DivergenceError(epoch, "non-finite validation loss")
        record = {"epoch": epoch, "train_loss": total / count, "val_loss": val}
        record.update({f"val_{k}": v for k, v in parts.items()})
        history.append(record)
        log.debug("epoch %d train %.5f val %.5f", epoch, record["train_loss"], val)
        if callback is not None:
            callback(record)
        if val < best:
            best, best_epoch, stale = val, epoch, 0
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainedPair(best_params, spec, cfg, norm, history, best_epoch)


def _fit_member(args):
    data, spec, cfg = args
    return fit(data, spec, cfg)


def fit_ensemble(data: IoDataset, spec: ModelSpec, cfg: TrainConfig, n_models: int,
                 threads: int = 1) -> List[TrainedPair]:
    """Train ``n_models`` members with seeds ``cfg.seed + i``; parallel runs give identical results."""
    jobs = [(data, spec, replace(cfg, seed=derive_seed(cfg.seed, i))) for i in range(n_models)]
    if threads <= 1 or n_models <= 1:
        return [_fit_member(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_fit_member, jobs))


def ensemble_average(pairs: Sequence[TrainedPair], u, y, mode: str = "one-step") -> Prediction:
    """Pointwise mean of member means; variance of the equal-weight mixture."""
    if not pairs:
        raise ValueError("ensemble needs at least one model")
    spec = pairs[0].spec
    for p in pairs[1:]:
        if p.spec != spec:
            raise ConfigError("ensemble members must share the same model spec")
    preds = [p.predict(u, y, mode) for p in pairs]
    means = np.stack([p.mean for p in preds])
    second = np.stack([p.var + p.mean ** 2 for p in preds])
    mean = means.mean(axis=0)
    var = np.maximum(second.mean(axis=0) - mean ** 2, np.min(np.stack([p.var for p in preds]), axis=0))
    return Prediction(preds[0].start, mean, var)


# ---------------------------------------------------------------- model selection

def selection_score(pair: TrainedPair) -> float:
    """Validation negative ELBO per step for teacher-bearing models, validation loss otherwise."""
    rec = pair.history[pair.best_epoch]
    if pair.spec.has_teacher and "val_teacher_nelbo" in rec:
        return float(rec["val_teacher_nelbo"])
    return float(rec["val_loss"])


def width_grid(depths: Sequence[int], widths: Sequence[int]) -> List[tuple]:
    """Hidden-width tuples of constant width for every (depth, width) pair."""
    return [tuple([w] * d) for d in depths for w in widths]


def grid_search(data: IoDataset, candidates: Sequence[ModelSpec], cfg: TrainConfig,
                budget_epochs: int = 30, baseline_hidden: Optional[tuple] = None,
                scorer: Optional[Callable[[ModelSpec], float]] = None):
    """Rank candidate specs by validation criterion (lower is better).

    With ``baseline_hidden`` set, candidates whose student widths are not
    contained in it are discarded. ``scorer`` replaces training, e.g. for
    cached or mocked scores.
    """
    if not candidates:
        raise ConfigError("grid search needs at least one candidate")
    kept = list(candidates)
    if baseline_hidden is not None:
        kept = [c for c in kept if is_subset_arch(c.student[1:-1], baseline_hidden)]
        if not kept:
            raise ConfigError("no candidate satisfies the student-within-baseline width constraint")
    short = replace(cfg, max_epochs=budget_epochs)
    scored = []
    for i, spec in enumerate(kept):
        if scorer is not None:
            score = float(scorer(spec))
        else:
            score = selection_score(fit(data, spec, short))
        scored.append((score, i, spec))
    scored.sort(key=lambda s: (s[0], s[1]))
    return [(spec, score) for score, _, spec in scored]
