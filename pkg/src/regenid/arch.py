"""Architecture descriptions and parameter initialization.

Width tuples follow the experiment tables: a lag-vector network
``(n_in, w_1, ..., w_k, n_out)`` has hidden widths ``w_1..w_k`` whose last
entry is the representation width. A teacher tuple
``(n_y, n_gru, p_1, ..., p_j, n_rep, n_out)`` has a GRU of width ``n_gru``
(also the latent width) followed by a projection of ``[h; z]`` through
``p_1..p_j`` down to ``n_rep``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .nets import init_dense, init_gru, init_head
from .rng import STREAM_INIT, PortableRNG


@dataclass(frozen=True)
class LossWeights:
    """Weights of the student likelihood, teacher bound and alignment terms."""

    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0

    def __post_init__(self):
        vals = (self.alpha1, self.alpha2, self.alpha3)
        if not all(np.isfinite(v) and v >= 0.0 for v in vals) or max(vals) <= 0.0:
            raise ConfigError(f"loss weights must be finite, non-negative, not all zero: {vals}")


@dataclass(frozen=True)
class LagSpec:
    """Numbers of delayed inputs (``n_b``) and outputs (``n_a``) in the regressor."""

    n_b: int
    n_a: int

    def __post_init__(self):
        if self.n_b < 0 or self.n_a < 0 or self.n_b + self.n_a < 1:
            raise ConfigError(f"invalid lags n_b={self.n_b}, n_a={self.n_a}")

    @property
    def max_lag(self) -> int:
        return max(self.n_a, self.n_b)

    def dim(self, u_dim: int = 1, y_dim: int = 1) -> int:
        return self.n_b * u_dim + self.n_a * y_dim


def is_subset_arch(student_hidden, baseline_hidden) -> bool:
    """True when the student's hidden widths appear, in order, among the baseline's."""
    it = iter(baseline_hidden)
    return all(any(w == b for b in it) for w in student_hidden)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of one identification run.

    ``kind`` is ``"regenerative"`` (teacher + student + shared head) or
    ``"baseline"`` (lag-vector network alone, trained on its likelihood).
    """

    kind: str
    lags: LagSpec
    student: tuple
    teacher: Optional[tuple] = None
    baseline: Optional[tuple] = None
    teacher_projection: str = "dense"
    weights: LossWeights = field(default_factory=LossWeights)
    u_dim: int = 1
    y_dim: int = 1
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "student", tuple(int(w) for w in self.student))
        if self.teacher is not None:
            object.__setattr__(self, "teacher", tuple(int(w) for w in self.teacher))
        if self.baseline is not None:
            object.__setattr__(self, "baseline", tuple(int(w) for w in self.baseline))
        self.validate()

    # ------------------------------------------------------------ derived

    @property
    def network(self) -> tuple:
        """Width tuple of the lag-vector network that is actually trained."""
        if self.kind == "baseline":
            return self.baseline if self.baseline is not None else self.student
        return self.student

    @property
    def hidden_widths(self) -> tuple:
        return self.network[1:-1]

    @property
    def rep_dim(self) -> int:
        return self.network[-2]

    @property
    def gru_dim(self) -> int:
        return self.teacher[1]

    @property
    def z_dim(self) -> int:
        return self.teacher[1]

    @property
    def projection_widths(self) -> tuple:
        return self.teacher[2:-1]

    @property
    def has_teacher(self) -> bool:
        return self.kind == "regenerative"

    def validate(self):
        if self.kind not in ("regenerative", "baseline"):
            raise ConfigError(f"model kind must be 'regenerative' or 'baseline', got {self.kind!r}")
        net = self.network
        if len(net) < 3:
            raise ConfigError(f"network tuple {net} needs at least one hidden layer")
        if net[0] != self.lags.dim(self.u_dim, self.y_dim):
            raise ConfigError(
                f"network input width {net[0]} != lag vector width {self.lags.dim(self.u_dim, self.y_dim)}")
        if net[-1] != self.y_dim:
            raise ConfigError(f"network output width {net[-1]} != output dim {self.y_dim}")
        if self.kind == "baseline" and self.weights.alpha1 <= 0.0:
            raise ConfigError("a baseline model needs alpha1 > 0")
        if self.kind == "regenerative":
            t = self.teacher
            if t is None or len(t) < 4:
                raise ConfigError("regenerative model needs a teacher tuple (n_y, n_gru, ..., n_rep, n_out)")
            if t[0] != self.y_dim or t[-1] != self.y_dim:
                raise ConfigError(f"teacher tuple {t} must start and end with output dim {self.y_dim}")
            if t[-2] != self.rep_dim:
                raise ConfigError(
                    f"shared head mismatch: teacher representation {t[-2]} != student representation {self.rep_dim}")
            if self.teacher_projection not in ("dense", "identity"):
                raise ConfigError(f"teacher_projection must be 'dense' or 'identity'")
            if self.teacher_projection == "identity" and (len(t) != 4 or t[2] != 2 * t[1]):
                raise ConfigError("identity projection needs teacher tuple (n_y, H, 2H, n_out)")

    def subset_ok(self) -> Optional[bool]:
        """Width constraint student-within-baseline, or None without a baseline tuple."""
        if self.baseline is None:
            return None
        return is_subset_arch(self.student[1:-1], self.baseline[1:-1])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lags"] = {"n_b": self.lags.n_b, "n_a": self.lags.n_a}
        d["weights"] = {"alpha1": self.weights.alpha1, "alpha2": self.weights.alpha2,
                        "alpha3": self.weights.alpha3}
        d.pop("extra")
        for k in ("student", "teacher", "baseline"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["lags"] = LagSpec(**d["lags"])
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


def init_params(spec: ModelSpec, seed: int) -> dict:
    """Seeded initial parameters, uniform in +-1/sqrt(fan_in)."""
    rng = PortableRNG(seed, STREAM_INIT)
    P = {}
    if spec.has_teacher:
        H, dz, dy = spec.gru_dim, spec.z_dim, spec.y_dim
        init_gru(P, "teacher.gru", dy + dz, H, rng)
        init_dense(P, "teacher.prior.0", H, H, rng)
        init_head(P, "teacher.prior.out", H, dz, rng)
        init_dense(P, "teacher.enc.0", dy + H, H, rng)
        init_head(P, "teacher.enc.out", H, dz, rng)
        if spec.teacher_projection == "dense":
            widths = (H + dz,) + spec.projection_widths
            for i in range(len(widths) - 1):
                init_dense(P, f"teacher.proj.{i}", widths[i], widths[i + 1], rng)
    net = spec.network
    for i in range(len(net) - 2):
        init_dense(P, f"student.hidden.{i}", net[i], net[i + 1], rng)
    init_head(P, "head", spec.rep_dim, spec.y_dim, rng)
    return P


def param_count(P: dict, part: str) -> int:
    """Number of scalars in ``part``: 'student' (network + head), 'teacher', or 'all'."""
    if part == "student":
        prefixes = ("student.", "head.")
    elif part == "teacher":
        prefixes = ("teacher.", "head.")
    else:
        prefixes = ("",)
    return int(sum(np.size(v) for k, v in P.items() if k.startswith(prefixes)))
