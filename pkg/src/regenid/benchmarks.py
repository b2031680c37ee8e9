"""Benchmark simulators, excitation signals and the dataset container.

Three systems are provided:

* a second-order linear Gaussian state-space model with process and
  measurement noise,
* the Narendra-Li system,
* a Wiener-Hammerstein surrogate (LTI, process noise, diode-like static
  nonlinearity, LTI), standing in for the measured circuit data which can be
  loaded from CSV instead.

Every simulator starts from the zero state unless told otherwise and is a pure
function of its input, seed and noise flags.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import DatasetFormatError, NonFiniteError
from .rng import STREAM_INPUT, STREAM_MEASUREMENT_NOISE, STREAM_PROCESS_NOISE, PortableRNG

Range = Tuple[int, int]

LGSSM_A = np.array([[0.7, 0.8], [0.0, 0.1]])
LGSSM_B = np.array([-1.0, 0.1])


@dataclass
class SimResult:
    y: np.ndarray
    y_clean: np.ndarray
    states: Optional[np.ndarray] = None


def _check_input(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(u)):
        raise NonFiniteError("input series contains non-finite values")
    return u


def simulate_lgssm(u, seed: int = 0, noise_on: bool = True, x0=None,
                   process_var: float = 0.5, meas_var: float = 1.0) -> SimResult:
    """Linear Gaussian state-space model.

    ``x_{k+1} = A x_k + B u_k + w_k`` and ``y_k = x_k[0] + v_k`` with
    ``w_k ~ N(0, process_var I)`` and ``v_k ~ N(0, meas_var)``. ``y_clean``
    shares the process-noise realization but omits ``v_k``.
    """
    u = _check_input(u)
    n = len(u)
    if noise_on:
        w = PortableRNG(seed, STREAM_PROCESS_NOISE).normal((n, 2)) * math.sqrt(process_var)
        v = PortableRNG(seed, STREAM_MEASUREMENT_NOISE).normal(n) * math.sqrt(meas_var)
    else:
        w = np.zeros((n, 2))
        v = np.zeros(n)
    x = np.zeros((n, 2))
    x[0] = 0.0 if x0 is None else np.asarray(x0, dtype=np.float64)
    a00, a01, a11 = LGSSM_A[0, 0], LGSSM_A[0, 1], LGSSM_A[1, 1]
    b0, b1 = LGSSM_B
    for k in range(n - 1):
        x[k + 1, 0] = a00 * x[k, 0] + a01 * x[k, 1] + b0 * u[k] + w[k, 0]
        x[k + 1, 1] = a11 * x[k, 1] + b1 * u[k] + w[k, 1]
    y_clean = x[:, 0].copy()
    y = y_clean + v if noise_on else y_clean.copy()
    return SimResult(y, y_clean, x)


def narendra_li_step(x1: float, x2: float, u: float) -> Tuple[float, float]:
    nx1 = (x1 / (1.0 + x1 * x1)) * math.sin(x2)
    nx2 = (x2 * math.cos(x2) + x1 * math.exp(-(x1 * x1 + x2 * x2) / 8.0)
           + u ** 3 / (1.0 + u * u + 0.5 * math.cos(x1 + x2)))
    return nx1, nx2


def narendra_li_output(x1: float, x2: float) -> float:
    return x1 / (1.0 + 0.5 * math.sin(x2)) + x2 / (1.0 + 0.5 * math.sin(x1))


def simulate_narendra_li(u, seed: int = 0, noise_on: bool = True, noise_std: float = 0.1,
                         x0=None) -> SimResult:
    """Narendra-Li benchmark with additive output noise of standard deviation ``noise_std``."""
    u = _check_input(u)
    n = len(u)
    states = np.zeros((n, 2))
    y_clean = np.zeros(n)
    x1, x2 = (0.0, 0.0) if x0 is None else (float(x0[0]), float(x0[1]))
    for k in range(n):
        if not (math.isfinite(x1) and math.isfinite(x2)):
            raise NonFiniteError(f"Narendra-Li state became non-finite at step {k}")
        states[k] = (x1, x2)
        y_clean[k] = narendra_li_output(x1, x2)
        try:
            x1, x2 = narendra_li_step(x1, x2, u[k])
        except OverflowError as exc:
            raise NonFiniteError(f"Narendra-Li state overflowed at step {k}") from exc
    if noise_on:
        y = y_clean + noise_std * PortableRNG(seed, STREAM_MEASUREMENT_NOISE).normal(n)
    else:
        y = y_clean.copy()
    return SimResult(y, y_clean, states)


def diode_nonlinearity(v):
    """Static map ``v - 0.6 * max(v, 0)``: identity for negative inputs, slope 0.4 above zero."""
    return v - 0.6 * np.maximum(v, 0.0)


def simulate_wh_surrogate(u, seed: int = 0, noise_on: bool = True, process_std: float = 0.1,
                          meas_std: float = 0.0) -> SimResult:
    """Wiener-Hammerstein surrogate with process noise ahead of the nonlinearity.

    ``v_k = 0.6 v_{k-1} + 0.4 u_k``, ``s_k = f(v_k + w_k)``,
    ``y_k = 0.5 y_{k-1} + 0.5 s_k``, with ``w_k ~ N(0, process_std**2)``.
    ``y_clean`` omits only the (default-off) measurement noise.
    """
    u = _check_input(u)
    n = len(u)
    w = (PortableRNG(seed, STREAM_PROCESS_NOISE).normal(n) * process_std
         if noise_on and process_std > 0 else np.zeros(n))
    v = np.zeros(n)
    y_clean = np.zeros(n)
    v_prev = y_prev = 0.0
    for k in range(n):
        v_prev = 0.6 * v_prev + 0.4 * u[k]
        s = v_prev + w[k]
        s = s - 0.6 * s if s > 0.0 else s
        y_prev = 0.5 * y_prev + 0.5 * s
        v[k] = v_prev
        y_clean[k] = y_prev
    if noise_on and meas_std > 0:
        y = y_clean + meas_std * PortableRNG(seed, STREAM_MEASUREMENT_NOISE).normal(n)
    else:
        y = y_clean.copy()
    return SimResult(y, y_clean, v[:, None])


# ---------------------------------------------------------------- excitation signals

def gen_uniform_input(n: int, lo: float, hi: float, seed: int) -> np.ndarray:
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    return PortableRNG(seed, STREAM_INPUT).uniform(int(n), lo, hi)


def gen_test_sine(n: int) -> np.ndarray:
    """``sin(2 pi k / 10) + sin(2 pi k / 5)`` for ``k = 0 .. n-1``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(n, dtype=np.float64)
    return np.sin(2.0 * k * np.pi / 10.0) + np.sin(2.0 * k * np.pi / 5.0)


def gen_multisine(n: int, band: Tuple[float, float], n_tones: int, seed: int,
                  rms: float = 1.0, fade: float = 0.05) -> np.ndarray:
    """Equal-amplitude multisine with random phases, scaled to ``rms`` then faded.

    ``band`` is in cycles per sample; tones sit on distinct DFT bins spread
    evenly over the band. ``fade`` is the fraction of samples ramped linearly
    in and out at each end.
    """
    f_lo, f_hi = band
    if not 0.0 <= f_lo < f_hi <= 0.5:
        raise ValueError(f"invalid band {band}")
    lo_bin, hi_bin = max(1, math.ceil(f_lo * n)), math.floor(f_hi * n)
    if hi_bin - lo_bin + 1 < n_tones or n_tones < 1:
        raise ValueError(f"band {band} holds {hi_bin - lo_bin + 1} bins, cannot place {n_tones} tones")
    bins = np.unique(np.round(np.linspace(lo_bin, hi_bin, n_tones)).astype(int))
    phases = PortableRNG(seed, STREAM_INPUT).uniform(len(bins), 0.0, 2.0 * np.pi)
    k = np.arange(n, dtype=np.float64)
    x = np.cos(2.0 * np.pi * np.outer(k, bins) / n + phases).sum(axis=1)
    x *= rms / np.sqrt(np.mean(x * x))
    nf = int(round(fade * n))
    if nf > 0:
        ramp = np.linspace(0.0, 1.0, nf, endpoint=False)
        x[:nf] *= ramp
        x[n - nf:] *= ramp[::-1]
    return x


def gen_swept_sine(n: int, f0: float, f1: float, amplitude: float = 1.0) -> np.ndarray:
    """Linear chirp from ``f0`` to ``f1`` cycles/sample over ``n`` samples."""
    if not (0.0 <= f0 <= 0.5 and 0.0 <= f1 <= 0.5):
        raise ValueError(f"frequencies must lie in [0, 0.5], got {f0}, {f1}")
    k = np.arange(n, dtype=np.float64)
    return amplitude * np.sin(2.0 * np.pi * (f0 * k + 0.5 * (f1 - f0) * k * k / n))


# ---------------------------------------------------------------- dataset container

@dataclass
class IoDataset:
    """Paired input/output series with split ranges and provenance."""

    u: np.ndarray
    y: np.ndarray
    y_clean: Optional[np.ndarray] = None
    seed: int = 0
    split: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y_clean is not None:
            self.y_clean = np.asarray(self.y_clean, dtype=np.float64)
        if len(self.u) != len(self.y) or (self.y_clean is not None and len(self.y_clean) != len(self.y)):
            raise DatasetFormatError("u, y and y_clean must have equal lengths")
        if not self.split:
            self.split = split_ranges(len(self.y), 0.8, 0.2)
        self.split = {k: (int(a), int(b)) for k, (a, b) in self.split.items()}
        check_split(self.split, len(self.y))

    def __len__(self):
        return len(self.y)

    @property
    def reference(self) -> np.ndarray:
        """Noiseless output when available, else the measured one."""
        return self.y_clean if self.y_clean is not None else self.y

    def segment(self, name: str) -> "IoDataset":
        a, b = self.split[name]
        return IoDataset(self.u[a:b], self.y[a:b], None if self.y_clean is None else self.y_clean[a:b],
                         self.seed, {"test": (0, b - a), "train": (0, 0), "val": (0, 0)},
                         dict(self.meta, segment=name))


def split_ranges(n: int, train: float = 0.8, val: float = 0.2, test: float = 0.0) -> dict:
    """Consecutive train/val/test ranges covering ``n`` samples in the given proportions."""
    total = train + val + test
    a = int(round(n * train / total))
    b = a + int(round(n * val / total))
    if test == 0.0:
        b = n
    return {"train": (0, a), "val": (a, b), "test": (b, n)}


def check_split(split: dict, n: int) -> None:
    ranges = sorted((a, b) for a, b in split.values() if b > a)
    for a, b in ranges:
        if a < 0 or b > n:
            raise DatasetFormatError(f"split range {(a, b)} outside [0, {n})")
    for (a0, b0), (a1, b1) in zip(ranges, ranges[1:]):
        if a1 < b0:
            raise DatasetFormatError(f"split ranges {(a0, b0)} and {(a1, b1)} overlap")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_csv_dataset(ds: IoDataset, path) -> None:
    """Write ``k,u,y[,y_clean]`` plus a ``<path>.meta`` key=value sidecar."""
    path = Path(path)
    cols = ["k", "u", "y"] + (["y_clean"] if ds.y_clean is not None else [])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(len(ds)):
            row = [str(k), _fmt(ds.u[k]), _fmt(ds.y[k])]
            if ds.y_clean is not None:
                row.append(_fmt(ds.y_clean[k]))
            fh.write(",".join(row) + "\n")
    lines = [f"seed={ds.seed}"]
    for name in ("train", "val", "test"):
        a, b = ds.split.get(name, (0, 0))
        lines.append(f"split.{name}={a}:{b}")
    for key in sorted(ds.meta):
        lines.append(f"meta.{key}={ds.meta[key]}")
    Path(str(path) + ".meta").write_text("\n".join(lines) + "\n")


def _read_meta(path: Path):
    seed, split, meta = 0, {}, {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key == "seed":
            seed = int(value)
        elif key.startswith("split."):
            a, _, b = value.partition(":")
            split[key[6:]] = (int(a), int(b))
        elif key.startswith("meta."):
            meta[key[5:]] = value
    return seed, split, meta


def load_csv_dataset(path, split: Optional[dict] = None) -> IoDataset:
    """Read a ``k,u,y[,y_clean]`` file; the sidecar (if any) supplies seed and split."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        for col in ("k", "u", "y"):
            if col not in header:
                raise DatasetFormatError(f"{path}: missing column {col!r} in header {header}")
        extra = set(header) - {"k", "u", "y", "y_clean"}
        if extra:
            raise DatasetFormatError(f"{path}: unexpected columns {sorted(extra)}")
        idx = {c: header.index(c) for c in header}
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[idx[c]]) for c in ("u", "y")]
                            + ([float(row[idx["y_clean"]])] if "y_clean" in idx else []))
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    data = np.array(rows, dtype=np.float64).reshape(len(rows), -1)
    seed, file_split, meta = 0, {}, {}
    meta_path = Path(str(path) + ".meta")
    if meta_path.exists():
        seed, file_split, meta = _read_meta(meta_path)
    y_clean = data[:, 2] if data.shape[1] == 3 else None
    return IoDataset(data[:, 0], data[:, 1], y_clean, seed, split or file_split, meta)
