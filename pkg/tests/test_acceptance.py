"""End-to-end acceptance checks.

The fast checks cover gradients, probability identities and simulator
oracles. The slow checks run the full ``regenid reproduce`` pipeline twice
(every packaged experiment at full scale, same seed) and test RMSE,
alignment, parameter-count, NLL, runtime and determinism targets on its
outputs. Measured values are listed in the terminal summary.
"""
import csv
import math
import time

import numpy as np
import pytest

from regenid import benchmarks as bm
from regenid import cli
from regenid import diffcore as dc
from regenid.arch import LossWeights, init_params
from regenid.config import ExperimentConfig
from regenid.experiments import build_dataset
from regenid.metrics import nll_metric, read_report
from regenid.nets import DenseLayer, GaussianHead, GaussianParams, GruCell, dense_forward, gru_step, head_forward
from regenid.nets import head_from
from regenid.student import student_forward, student_from
from regenid.teacher import kl_gaussian, nll_gaussian, teacher_forward
from regenid.trainer import joint_loss

from conftest import tiny_spec

EXPERIMENTS = ("lgssm", "narendra_li", "wh")


# ---------------------------------------------------------------- criterion 1

def _op_cases(rng):
    a, b, pos = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), np.abs(rng.normal(size=(3, 4))) + 0.3
    away = np.where(np.abs(a) < 0.02, 0.05, a)
    wts = rng.normal(size=(3, 4))
    red = lambda n: dc.sum_(dc.mul(n, dc.const(wts))) if n.shape == (3, 4) else dc.sum_(dc.square(n))
    yield "add", lambda p: red(dc.add(p[0], p[1])), [a, b]
    yield "sub", lambda p: red(dc.sub(p[0], p[1])), [a, b]
    yield "mul", lambda p: red(dc.mul(p[0], p[1])), [a, b]
    for name, fn, x in [("neg", dc.neg, a), ("square", dc.square, a), ("exp", dc.exp, a), ("log", dc.log, pos),
                        ("tanh", dc.tanh, a), ("sigmoid", dc.sigmoid, a), ("softplus", dc.softplus, a),
                        ("relu", dc.relu, away), ("transpose", dc.transpose, a), ("mean", dc.mean, a),
                        ("clip", lambda n: dc.clip(n, -3.0, 3.0), away)]:
        yield name, (lambda f: lambda p: red(f(p[0])))(fn), [x]
    yield "matmul", lambda p: red(dc.matmul(p[0], p[1])), [rng.normal(size=(3, 5)), rng.normal(size=(5, 4))]
    yield "linear", lambda p: red(dc.linear(p[0], p[1], p[2])), [rng.normal(size=(3, 5)), rng.normal(size=(4, 5)),
                                                                   rng.normal(size=4)]
    yield "concat", lambda p: red(dc.concat([p[0], p[1]], axis=1)[:, 1:5]), [rng.normal(size=(3, 2)), a]
    for act in ("tanh", "relu", "sigmoid", "identity"):
        W, bias, x = rng.normal(size=(4, 3)), rng.normal(size=4), rng.normal(size=(3, 3))
        if act == "relu":
            x = x + 0.0
        yield f"dense-{act}", (lambda ac: lambda p: red(dense_forward(DenseLayer(p[0], p[1], ac), p[2])))(act), \
            [W, bias, x]
    H, n_in = 4, 3
    gru = [rng.normal(size=s) for s in [(H, n_in)] * 3 + [(H, H)] * 3 + [(H,)] * 3]
    yield "gru", lambda p: red(gru_step(GruCell(*p[:9]), p[9], p[10])), \
        gru + [rng.normal(size=(3, n_in)), rng.normal(size=(3, H))]

    def head(p):
        g = head_forward(GaussianHead(DenseLayer(p[0], p[1], "identity"), DenseLayer(p[2], p[3], "identity")), p[4])
        return dc.add(dc.sum_(dc.square(g.mean)), dc.sum_(g.logvar))
    yield "head", head, [rng.normal(size=(2, 5)), rng.normal(size=2), rng.normal(size=(2, 5)),
                         rng.normal(size=2), rng.normal(size=(3, 5))]
    yield "kl", lambda p: kl_gaussian(GaussianParams(p[0], p[1]), GaussianParams(p[2], p[3])), \
        [rng.normal(size=(3, 4)) for _ in range(4)]
    yield "nll", lambda p: nll_gaussian(rng_y, GaussianParams(p[0], p[1])), [rng.normal(size=(3, 1))] * 2


rng_y = np.random.default_rng(99).normal(size=(3, 1))


def _joint_cases(rng):
    for kind in ("regenerative", "baseline"):
        spec = tiny_spec(kind)
        P = init_params(spec, 0)
        keys = sorted(P)
        T, B = 3, 2
        y = rng.normal(size=(T, B, 1))
        X = rng.normal(size=(T * B, spec.lags.dim()))
        eps = rng.normal(size=(T, B, spec.z_dim)) if spec.has_teacher else None

        def f(vals, spec=spec, keys=keys, y=y, X=X, eps=eps):
            nodes = dict(zip(keys, vals))
            head = head_from(nodes, "head")
            teacher = teacher_forward(nodes, y, eps, head) if spec.has_teacher else None
            student = student_forward(student_from(nodes, head), X)
            return joint_loss(teacher, student, y.reshape(-1, 1), spec.weights)

        yield f"joint-{kind}", f, [P[k] for k in keys]


def test_c1_gradient_correctness(measured):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for name, f, vals in list(_op_cases(rng)) + list(_joint_cases(rng)):
        rep = dc.gradient_check(f, vals)
        assert rep.passed, f"{name}: {rep}"
        worst = max(worst, rep.max_error)
    elapsed = time.perf_counter() - t0
    measured("max relative error", worst, "< 1e-4")
    measured("seconds", elapsed, "< 30")
    assert worst < 1e-4 and elapsed < 30


# ---------------------------------------------------------------- criterion 2

def test_c2_probability_identities(measured):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    m1, l1, m2, l2 = (rng.normal(scale=2.0, size=(10_000, 3)) for _ in range(4))
    per_pair = [float(kl_gaussian(GaussianParams(m1[i], l1[i]), GaussianParams(m2[i], l2[i])).value)
                for i in range(10_000)]
    assert min(per_pair) >= 0.0
    self_kl = max(abs(float(kl_gaussian(GaussianParams(m1[i], l1[i]),
                                        GaussianParams(m1[i].copy(), l1[i].copy())).value)) for i in range(100))
    assert self_kl < 1e-12
    worst = 0.0
    for i in range(100):
        y, mu, lv = rng.normal(size=3), rng.normal(size=3), rng.uniform(-3, 3, 3)
        density = np.prod([math.exp(-(a - m) ** 2 / (2 * math.exp(l))) / math.sqrt(2 * math.pi * math.exp(l))
                           for a, m, l in zip(y, mu, lv)])
        got = float(nll_gaussian(y, GaussianParams(mu, lv)).value)
        worst = max(worst, abs(got + math.log(density)))
    elapsed = time.perf_counter() - t0
    measured("min KL", min(per_pair), ">= 0")
    measured("max |KL(q,q)|", self_kl, "< 1e-12")
    measured("max NLL oracle error", worst, "< 1e-10")
    measured("seconds", elapsed, "< 5")
    assert worst < 1e-10 and elapsed < 5


# ---------------------------------------------------------------- criterion 3

def test_c3_simulator_oracles(measured):
    y = bm.simulate_lgssm(np.zeros(3), noise_on=False, x0=[1.0, 0.0]).y
    np.testing.assert_allclose(y, [1.0, 0.7, 0.49], rtol=0, atol=1e-15)
    nl = bm.simulate_narendra_li(np.zeros(100), noise_on=False)
    assert np.all(nl.y == 0.0) and np.all(nl.states == 0.0)
    wh = bm.simulate_wh_surrogate(np.ones(200), noise_on=False).y
    measured("WH steady-state error", abs(wh[-1] - 0.4), "< 1e-9")
    assert abs(wh[-1] - 0.4) < 1e-9


# ---------------------------------------------------------------- full pipeline

@pytest.fixture(scope="session")
def reproduce_runs(tmp_path_factory):
    """Two full ``regenid reproduce`` runs with the same seed."""
    dirs = []
    for tag in ("run1", "run2"):
        out = tmp_path_factory.mktemp(tag)
        assert cli.main(["reproduce", "--seed", "0", "--out", str(out)]) == 0
        dirs.append(out)
    return dirs


def _reports(out, name):
    return {(r.model, r.mode, r.reference): r for r in read_report(out / name / f"report_{name}.csv")}


def _one_step(out, name, model):
    return _reports(out, name)[(model, "one-step", "clean")]


def _runtime(out):
    with open(out / "runtime.csv") as fh:
        return {row["experiment"]: float(row["seconds"]) for row in csv.DictReader(fh)}


@pytest.mark.slow
def test_c4_lgssm_rmse(reproduce_runs, measured):
    out = reproduce_runs[0]
    reg, base = _one_step(out, "lgssm", "regenerative"), _one_step(out, "lgssm", "baseline")
    minutes = _runtime(out)["lgssm"] / 60
    measured("regenerative RMSE", reg.rmse, "<= 0.12")
    measured("baseline RMSE", base.rmse, "<= 0.12")
    measured("minutes", minutes, "< 15")
    assert reg.rmse <= 0.12 and base.rmse <= 0.12
    assert minutes < 15


@pytest.mark.slow
def test_c5_narendra_li_rmse(reproduce_runs, measured):
    out = reproduce_runs[0]
    reg, base = _one_step(out, "narendra_li", "regenerative"), _one_step(out, "narendra_li", "baseline")
    minutes = _runtime(out)["narendra_li"] / 60
    measured("regenerative RMSE", reg.rmse, "<= 0.15")
    measured("regenerative / baseline", reg.rmse / base.rmse, "<= 1.5")
    measured("minutes", minutes, "< 20")
    assert reg.rmse <= 0.15 and reg.rmse <= 1.5 * base.rmse
    assert minutes < 20


@pytest.mark.slow
def test_c6_wh_rmse_relative_to_output(reproduce_runs, measured):
    out = reproduce_runs[0]
    test = build_dataset(ExperimentConfig.builtin("wh")).segment("test")
    out_rms = float(np.sqrt(np.mean(test.reference ** 2)))
    for model in ("baseline", "regenerative"):
        r = _one_step(out, "wh", model)
        measured(f"{model} RMSE / output RMS", r.rmse / out_rms, "<= 0.1")
        assert r.rmse <= 0.1 * out_rms


@pytest.mark.slow
def test_c7_lgssm_representation_alignment(reproduce_runs, measured):
    with open(reproduce_runs[0] / "correlations.csv") as fh:
        rows = {(r["experiment"], r["student"]): float(r["summary"]) for r in csv.DictReader(fh)}
    gap = rows[("lgssm", "regenerative")] - rows[("lgssm", "baseline")]
    measured("regenerative summary", rows[("lgssm", "regenerative")], "")
    measured("baseline summary", rows[("lgssm", "baseline")], "")
    measured("gap", gap, ">= 0.1")
    assert gap >= 0.1


@pytest.mark.slow
@pytest.mark.parametrize("name", ["lgssm", "narendra_li"])
def test_c8_distillation(reproduce_runs, measured, name):
    out = reproduce_runs[0]
    reg, base = _one_step(out, name, "regenerative"), _one_step(out, name, "baseline")
    measured("parameters (student, baseline)", f"{reg.params_count}, {base.params_count}", "student fewer")
    measured("regenerative / baseline RMSE", reg.rmse / base.rmse, "<= 1.15")
    assert reg.params_count < base.params_count
    assert reg.rmse <= 1.15 * base.rmse


@pytest.mark.slow
def test_c9_reproduce_is_byte_identical(reproduce_runs):
    a, b = reproduce_runs
    names = ["report.csv", "table1.csv", "correlations.csv"] + [f"{n}/report_{n}.csv" for n in EXPERIMENTS]
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


@pytest.mark.slow
@pytest.mark.parametrize("name", EXPERIMENTS)
def test_c10_regenerative_nll_range(reproduce_runs, measured, name):
    r = _one_step(reproduce_runs[0], name, "regenerative")
    measured("regenerative NLL", r.nll, "in [0.5, 2.0]")
    assert 0.5 <= r.nll <= 2.0


@pytest.mark.slow
def test_lgssm_free_run_tracks_noiseless_output(reproduce_runs, measured):
    """Free-run simulation of the identified LGSSM follows the noiseless trajectory of the test sinusoid."""
    out = reproduce_runs[0]
    with open(out / "lgssm" / "predictions_lgssm.csv") as fh:
        rows = list(csv.DictReader(fh))
    ref = np.array([float(r["y_reference"]) for r in rows])
    sim = np.array([float(r["mean_regenerative_free_run"]) for r in rows])
    rel = float(np.sqrt(np.mean((sim - ref) ** 2)) / np.sqrt(np.mean(ref ** 2)))
    corr = float(np.corrcoef(sim, ref)[0, 1])
    measured("free-run RMSE / output RMS", rel, "<= 0.1")
    measured("free-run correlation with noiseless output", corr, ">= 0.99")
    assert rel <= 0.1 and corr >= 0.99
