import numpy as np
import pytest

from regenid.arch import LagSpec, LossWeights, ModelSpec, init_params
from regenid.benchmarks import IoDataset, split_ranges


def tiny_spec(kind="regenerative", n_b=2, n_a=2, H=3, rep=4, weights=None, projection="dense"):
    """Small but complete architecture for fast tests (all dims <= 8)."""
    d = n_b + n_a
    lags = LagSpec(n_b, n_a)
    w = weights or LossWeights(1.0, 1.0, 1.0)
    if kind == "baseline":
        return ModelSpec("baseline", lags, (d, rep, 1), None, (d, 5, rep, 1), projection,
                         LossWeights(w.alpha1 or 1.0, 0.0, 0.0))
    teacher = (1, H, 2 * H, 1) if projection == "identity" else (1, H, 5, rep, 1)
    student = (d, 2 * H, 1) if projection == "identity" else (d, rep, 1)
    return ModelSpec("regenerative", lags, student, teacher, None, projection, w)


def arx_dataset(n=1200, seed=0, noise_std=0.1):
    """y_t = 0.5 y_{t-1} + u_{t-1} + e_t with e ~ N(0, noise_std^2)."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1, 1, n)
    e = noise_std * rng.normal(size=n)
    y = np.zeros(n)
    yc = np.zeros(n)
    for t in range(1, n):
        yc[t] = 0.5 * y[t - 1] + u[t - 1]
        y[t] = yc[t] + e[t]
    return IoDataset(u, y, yc, seed, split_ranges(n, 0.8, 0.2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_params():
    spec = tiny_spec()
    return spec, init_params(spec, 0)


_MEASURED = []


@pytest.fixture()
def measured(request):
    """Record a named measured value; all values are listed at the end of the run."""
    def record(name, value, target):
        _MEASURED.append((request.node.name, name, value, target))
    return record


def pytest_terminal_summary(terminalreporter):
    if _MEASURED:
        terminalreporter.section("measured values")
        for test, name, value, target in _MEASURED:
            v = f"{value:.6g}" if isinstance(value, float) else str(value)
            terminalreporter.write_line(f"{test}: {name} = {v}   (target {target})")
