"""Evaluation metrics, representation-correlation analysis and CSV reports."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError

LOG_2PI = math.log(2.0 * math.pi)

REPORT_COLUMNS = ("experiment", "model", "rmse", "nll", "architecture", "params_count", "mode",
                  "reference", "seed")


def rmse(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise ShapeError("rmse", y_true.shape, y_pred.shape)
    if y_true.size == 0:
        raise ShapeError("rmse", y_true.shape, detail="empty series")
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def nll_metric(y_true, mean, var) -> float:
    """Average Gaussian negative log-likelihood per time step."""
    y_true = np.asarray(y_true, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if y_true.size == 0:
        raise ShapeError("nll_metric", y_true.shape, detail="empty series")
    n = y_true.shape[0]
    y2 = y_true.reshape(n, -1)
    if mean.shape[:1] != (n,) or mean.size != y2.size or var.shape != mean.shape:
        raise ShapeError("nll_metric", y_true.shape, mean.shape, var.shape)
    mean, var = mean.reshape(y2.shape), var.reshape(y2.shape)
    per_step = 0.5 * np.sum(LOG_2PI + np.log(var) + (y2 - mean) ** 2 / var, axis=1)
    return float(per_step.mean())


@dataclass
class CorrelationResult:
    matrix: np.ndarray           # (units of A) x (units of B)
    degenerate_a: np.ndarray     # bool per unit of A with zero variance
    degenerate_b: np.ndarray

    @property
    def summary(self) -> float:
        """Mean over A-units of the largest absolute correlation with any B-unit."""
        if self.matrix.size == 0:
            return 0.0
        return float(np.abs(self.matrix).max(axis=1).mean())


def correlation_matrix(phi_a, phi_b, var_floor: float = 1e-24) -> CorrelationResult:
    """Pearson correlation between every unit of ``phi_a`` and of ``phi_b`` over time.

    Units whose variance is below ``var_floor`` get correlation 0 and are flagged.
    """
    A = np.asarray(phi_a, dtype=np.float64)
    B = np.asarray(phi_b, dtype=np.float64)
    A = A[:, None] if A.ndim == 1 else A
    B = B[:, None] if B.ndim == 1 else B
    if A.shape[0] != B.shape[0] or A.shape[0] == 0:
        raise ShapeError("correlation_matrix", A.shape, B.shape, detail="time lengths differ")
    Ac = A - A.mean(axis=0)
    Bc = B - B.mean(axis=0)
    sa = np.sqrt((Ac ** 2).mean(axis=0))
    sb = np.sqrt((Bc ** 2).mean(axis=0))
    dead_a = sa ** 2 <= var_floor
    dead_b = sb ** 2 <= var_floor
    sa = np.where(dead_a, 1.0, sa)
    sb = np.where(dead_b, 1.0, sb)
    C = (Ac / sa).T @ (Bc / sb) / A.shape[0]
    C = np.clip(C, -1.0, 1.0)
    C[dead_a, :] = 0.0
    C[:, dead_b] = 0.0
    return CorrelationResult(C, dead_a, dead_b)


@dataclass
class EvalReport:
    experiment: str
    model: str
    rmse: float
    nll: float
    mode: str = "one-step"
    reference: str = "clean"
    architecture: str = ""
    params_count: int = 0
    seed: int = 0
    residuals: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.rmse >= 0.0:
            raise ValueError(f"rmse must be non-negative, got {self.rmse}")

    def row(self) -> dict:
        return {
            "experiment": self.experiment,
            "model": self.model,
            "rmse": format(self.rmse, ".17g"),
            "nll": format(self.nll, ".17g"),
            "architecture": self.architecture,
            "params_count": str(self.params_count),
            "mode": self.mode,
            "reference": self.reference,
            "seed": str(self.seed),
        }


def emit_report(reports: Sequence[EvalReport], path) -> Path:
    """Write the report table; the parent directory must exist and be writable."""
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"cannot write report, no directory {path.parent}")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in reports:
            writer.writerow(r.row())
    return path


def read_report(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append(EvalReport(
            experiment=r["experiment"], model=r["model"], rmse=float(r["rmse"]), nll=float(r["nll"]),
            mode=r["mode"], reference=r["reference"], architecture=r["architecture"],
            params_count=int(r["params_count"]), seed=int(r["seed"])))
    return out


def emit_series(path, k, columns: dict) -> Path:
    """Plot-ready CSV: a time index followed by named equal-length columns."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[n], dtype=np.float64).reshape(-1) for n in names]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["k"] + names) + "\n")
        for i, kk in enumerate(np.asarray(k).reshape(-1)):
            fh.write(",".join([str(int(kk))] + [format(a[i], ".17g") for a in arrays]) + "\n")
    return path


def emit_matrix(path, matrix) -> Path:
    path = Path(path)
    M = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["unit"] + [f"b{j}" for j in range(M.shape[1])]) + "\n")
        for i, row in enumerate(M):
            fh.write(",".join([f"a{i}"] + [format(v, ".17g") for v in row]) + "\n")
    return path
