"""Benchmark experiments end to end: data assembly, training, evaluation, analysis, reports."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import benchmarks as bm
from .arch import ModelSpec
from .config import ExperimentConfig
from .errors import ConfigError, DatasetFormatError
from .metrics import (CorrelationResult, EvalReport, correlation_matrix, emit_matrix, emit_report,
                      emit_series, nll_metric, rmse)
from .trainer import TrainedPair, ensemble_average, fit_ensemble, grid_search, width_grid

log = logging.getLogger(__name__)

MODEL_KINDS = ("baseline", "regenerative")
REPRODUCE_EXPERIMENTS = ("lgssm", "narendra_li", "wh")


# ---------------------------------------------------------------- data

def make_input(spec: dict, n: int, seed: int) -> np.ndarray:
    kind = spec["kind"]
    if kind == "uniform":
        return bm.gen_uniform_input(n, spec["lo"], spec["hi"], seed)
    if kind == "sine":
        return bm.gen_test_sine(n)
    if kind == "swept_sine":
        return bm.gen_swept_sine(n, spec["f0"], spec["f1"], spec["amplitude"])
    if kind == "multisine":
        return bm.gen_multisine(n, tuple(spec["band"]), spec["n_tones"], seed, rms=spec["rms"], fade=spec["fade"])
    raise ConfigError(f"unknown input kind {kind!r} (uniform, sine, swept_sine, multisine)")


def simulate(name: str, u, seed: int, noise_on: bool, noise: dict) -> bm.SimResult:
    if name == "lgssm":
        return bm.simulate_lgssm(u, seed, noise_on, process_var=noise["lgssm_process_var"],
                                 meas_var=noise["lgssm_meas_var"])
    if name == "narendra_li":
        return bm.simulate_narendra_li(u, seed, noise_on, noise_std=noise["nl_std"])
    if name == "wh":
        return bm.simulate_wh_surrogate(u, seed, noise_on, process_std=noise["wh_process_std"],
                                        meas_std=noise["wh_meas_std"])
    raise ConfigError(f"unknown simulator {name!r}")


def _join(train: bm.IoDataset, test: bm.IoDataset, meta: dict) -> bm.IoDataset:
    a, b = train.split["train"][1], len(train)
    y_clean = None
    if train.y_clean is not None or test.y_clean is not None:
        y_clean = np.concatenate([train.reference, test.reference])
    return bm.IoDataset(
        np.concatenate([train.u, test.u]), np.concatenate([train.y, test.y]), y_clean, train.seed,
        {"train": (0, a), "val": (a, b), "test": (b, b + len(test))}, meta)


def build_dataset(cfg: ExperimentConfig) -> bm.IoDataset:
    """Training/validation record followed by a separately generated test record.

    The test record starts from the zero state with its own input (seed + 1);
    its range is the ``test`` split of the returned dataset.
    """
    b = cfg.data["benchmark"]
    seed = cfg.seed
    sp = b["split"]
    if b["name"] == "csv":
        return _csv_dataset(cfg)
    n, nt = int(b["n_samples"]), int(b["test_input"]["n_samples"])
    u = make_input(b["input"], n, seed)
    sim = simulate(b["name"], u, seed, b["noise"]["train"], b["noise"])
    train = bm.IoDataset(u, sim.y, sim.y_clean, seed, bm.split_ranges(n, sp["train"], sp["val"]))
    ut = make_input(b["test_input"], nt, seed + 1)
    simt = simulate(b["name"], ut, seed + 1, b["noise"]["test"], b["noise"])
    test = bm.IoDataset(ut, simt.y, simt.y_clean, seed + 1, {"test": (0, nt)})
    meta = {"benchmark": b["name"], "input": b["input"]["kind"], "test_input": b["test_input"]["kind"],
            "noise_train": b["noise"]["train"], "noise_test": b["noise"]["test"]}
    return _join(train, test, meta)


def _csv_dataset(cfg: ExperimentConfig) -> bm.IoDataset:
    b = cfg.data["benchmark"]
    sp = b["split"]
    ds = bm.load_csv_dataset(b["csv"]["path"])
    if b["csv"]["test_path"]:
        n = len(ds)
        has_sidecar = Path(str(b["csv"]["path"]) + ".meta").exists()
        a = ds.split.get("train", (0, 0))[1] if has_sidecar else 0
        if a <= 0 or a >= n:
            a = int(round(n * sp["train"] / (sp["train"] + sp["val"])))
        train = bm.IoDataset(ds.u, ds.y, ds.y_clean, ds.seed, {"train": (0, a), "val": (a, n)})
        t = bm.load_csv_dataset(b["csv"]["test_path"])
        test = bm.IoDataset(t.u, t.y, t.y_clean, t.seed, {"test": (0, len(t))})
        return _join(train, test, dict(ds.meta, benchmark="csv"))
    if ds.split.get("test", (0, 0))[1] <= ds.split.get("test", (0, 0))[0]:
        raise DatasetFormatError(f"{b['csv']['path']}: no test range; give split.test in the .meta sidecar "
                                 "or set benchmark.csv.test_path")
    return ds


# ---------------------------------------------------------------- evaluation

def arch_string(spec: ModelSpec) -> str:
    """Width tuple of the trained lag-vector network, e.g. ``(15, 30, 1)``."""
    return "(" + ", ".join(str(w) for w in spec.network) + ")"


def evaluate(pairs: Sequence[TrainedPair], test: bm.IoDataset, experiment: str, model: str,
             modes: Sequence[str] = ("one-step", "free-run"), seed: int = 0):
    """Reports for every (mode, reference) plus the one-step prediction used for plots."""
    reports, preds = [], {}
    for mode in modes:
        pred = ensemble_average(pairs, test.u, test.y, mode)
        preds[mode] = pred
        m = pred.start
        refs = [("clean", test.reference), ("noisy", test.y)]
        for ref_name, ref in refs:
            ref = ref[m:]
            reports.append(EvalReport(
                experiment=experiment, model=model, rmse=rmse(ref, pred.mean), nll=nll_metric(ref, pred.mean, pred.var),
                mode=mode, reference=ref_name, architecture=arch_string(pairs[0].spec),
                params_count=pairs[0].n_params("student"), seed=seed,
                residuals=ref.reshape(-1) - pred.mean.reshape(-1)))
    return reports, preds


def representation_correlation(student: TrainedPair, teacher: TrainedPair, u, y) -> CorrelationResult:
    """Correlation of every student unit (rows) with every teacher unit (columns) over a segment.

    The teacher runs from the zero state over the whole segment with
    posterior-mean latents; rows before the student's first lag-complete
    step are dropped.
    """
    pred = student.predict(u, y, "one-step")
    phi_T = teacher.teacher_phi(y)[pred.start:]
    return correlation_matrix(pred.phi, phi_T)


# ---------------------------------------------------------------- grid search

def grid_candidates(cfg: ExperimentConfig) -> List[ModelSpec]:
    """One spec per (depth, width) of ``grid``, for the network kind in ``grid.model``.

    Regenerative candidates keep the configured teacher and resize its last
    projection layer to the candidate's representation width.
    """
    g = cfg.data["grid"]
    kind = g["model"]
    base = cfg.model_spec(kind)
    n_in, n_out = base.lags.dim(), 1
    out = []
    for hidden in width_grid(g["depths"], g["widths"]):
        net = (n_in,) + hidden + (n_out,)
        if kind == "baseline":
            out.append(replace(base, baseline=net))
        else:
            t = base.teacher
            out.append(replace(base, student=net, teacher=t[:-2] + (hidden[-1], t[-1])))
    return out


def run_grid(cfg: ExperimentConfig, ds: bm.IoDataset, out: Optional[Path] = None):
    """Rank the grid by validation criterion; writes ``grid_<experiment>.csv`` when ``out`` is set."""
    g = cfg.data["grid"]
    baseline_hidden = None
    if g["model"] == "regenerative" and g["pair_with_baseline"]:
        baseline_hidden = tuple(cfg.data["model"]["baseline"][1:-1])
    ranked = grid_search(ds, grid_candidates(cfg), cfg.train_config(), g["budget_epochs"], baseline_hidden)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"grid_{cfg.experiment}.csv", "w", newline="") as fh:
            fh.write("rank,architecture,score\n")
            for i, (spec, score) in enumerate(ranked, start=1):
                fh.write(f"{i},\"{arch_string(spec)}\",{format(score, '.17g')}\n")
    return ranked


# ---------------------------------------------------------------- running

@dataclass
class ExperimentResult:
    name: str
    reports: List[EvalReport]
    correlations: Dict[str, CorrelationResult]
    pairs: Dict[str, List[TrainedPair]] = field(repr=False, default_factory=dict)

    def report(self, model: str, mode: str = "one-step", reference: str = "clean") -> EvalReport:
        for r in self.reports:
            if (r.model, r.mode, r.reference) == (model, mode, reference):
                return r
        raise KeyError((model, mode, reference))


def run_experiment(cfg: ExperimentConfig, out: Optional[Path] = None, threads: int = 1,
                   dataset: Optional[bm.IoDataset] = None) -> ExperimentResult:
    """Train baseline and regenerative models, evaluate on the test record, analyze representations."""
    from .checkpoint import save_checkpoint

    name = cfg.experiment
    ds = build_dataset(cfg) if dataset is None else dataset
    test = ds.segment("test")
    pairs: Dict[str, List[TrainedPair]] = {}
    reports: List[EvalReport] = []
    preds = {}
    for kind in MODEL_KINDS:
        log.info("%s: training %d %s model(s)", name, cfg.ensemble, kind)
        pairs[kind] = fit_ensemble(ds, cfg.model_spec(kind), cfg.train_config(), cfg.ensemble, threads)
        r, p = evaluate(pairs[kind], test, name, kind, cfg.data["evaluation"]["modes"], cfg.seed)
        reports += r
        preds[kind] = p
    seg = ds.segment(cfg.data["evaluation"]["correlation_segment"])
    teacher = pairs["regenerative"][0]
    correlations = {kind: representation_correlation(pairs[kind][0], teacher, seg.u, seg.y) for kind in MODEL_KINDS}
    result = ExperimentResult(name, reports, correlations, pairs)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        cfg.dump(out / f"config_{name}.yaml")
        emit_report(reports, out / f"report_{name}.csv")
        ck = out / "checkpoints"
        ck.mkdir(parents=True, exist_ok=True)
        for kind in MODEL_KINDS:
            for i, pair in enumerate(pairs[kind]):
                save_checkpoint(pair, ck / f"{kind}_{i}.ckpt")
        m = preds["baseline"]["one-step"].start if "one-step" in preds["baseline"] else 0
        cols = {"u": test.u[m:], "y_reference": test.reference[m:], "y_measured": test.y[m:]}
        for kind in MODEL_KINDS:
            for mode, pr in preds[kind].items():
                tag = f"{kind}_{mode.replace('-', '_')}"
                cols[f"mean_{tag}"] = pr.mean
                cols[f"var_{tag}"] = pr.var
        emit_series(out / f"predictions_{name}.csv", np.arange(m, len(test)), cols)
        for kind, res in correlations.items():
            emit_matrix(out / f"correlation_{name}_{kind}.csv", res.matrix)
    return result


def emit_correlation_summary(results: Sequence[ExperimentResult], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write("experiment,student,summary,student_units,teacher_units,degenerate_student,degenerate_teacher\n")
        for res in results:
            for kind, c in res.correlations.items():
                fh.write(f"{res.name},{kind},{format(c.summary, '.17g')},{c.matrix.shape[0]},{c.matrix.shape[1]},"
                         f"{int(c.degenerate_a.sum())},{int(c.degenerate_b.sum())}\n")
    return path


def emit_table1(results: Sequence[ExperimentResult], path) -> Path:
    """Table-1 layout: one row per experiment, baseline and regenerative side by side (one-step, clean)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write("experiment,baseline_rmse,baseline_nll,baseline_architecture,baseline_params,"
                 "regenerative_rmse,regenerative_nll,student_architecture,student_params\n")
        for res in results:
            b = res.report("baseline")
            r = res.report("regenerative")
            fh.write(f"{res.name},{format(b.rmse, '.17g')},{format(b.nll, '.17g')},\"{b.architecture}\","
                     f"{b.params_count},{format(r.rmse, '.17g')},{format(r.nll, '.17g')},\"{r.architecture}\","
                     f"{r.params_count}\n")
    return path


def reproduce(out, seed: int = 0, threads: int = 1,
              experiments: Sequence[str] = REPRODUCE_EXPERIMENTS,
              overrides: Optional[dict] = None) -> List[ExperimentResult]:
    """Run the packaged experiments and write the Table-1 analogue plus per-experiment outputs."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    results, seconds = [], []
    for name in experiments:
        cfg = ExperimentConfig.builtin(name).with_overrides(seed=seed, **(overrides or {}))
        t0 = time.perf_counter()
        results.append(run_experiment(cfg, out / name, threads))
        seconds.append(time.perf_counter() - t0)
        log.info("%s: finished in %.1f s", name, seconds[-1])
    # Wall times vary run to run, so they live apart from the report files.
    (out / "runtime.csv").write_text("experiment,seconds\n" + "".join(
        f"{name},{s:.1f}\n" for name, s in zip(experiments, seconds)))
    emit_report([r for res in results for r in res.reports], out / "report.csv")
    emit_table1(results, out / "table1.csv")
    emit_correlation_summary(results, out / "correlations.csv")
    return results
