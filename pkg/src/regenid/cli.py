"""Command-line interface: ``regenid <command> [options]``.

Commands: simulate, train, evaluate, analyze, gridsearch, reproduce. Every
command accepts --config, --seed, --out, --threads and --set KEY=VALUE.
Output files depend only on inputs and seed. Failures print one JSON object
to stderr and exit with status 2 (bad configuration or input) or 1 (runtime
failure such as divergence).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import yaml

from . import __version__
from . import experiments as ex
from ._backend import BACKEND
from .benchmarks import IoDataset, load_csv_dataset, save_csv_dataset
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, describe_defaults
from .errors import ConfigError, DatasetFormatError, DivergenceError, RegenError
from .metrics import emit_matrix, emit_report, emit_series
from .trainer import fit_ensemble

log = logging.getLogger("regenid")

BUILTIN_CONFIGS = ("lgssm", "narendra_li", "wh")


# ---------------------------------------------------------------- helpers

def _parse_set(items: List[str]) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = yaml.safe_load(value)
    return out


def load_config(args) -> ExperimentConfig:
    """``--config`` is a YAML path or a built-in name; then --set and --seed apply."""
    if args.config is None:
        cfg = ExperimentConfig.from_dict({})
    elif args.config in BUILTIN_CONFIGS and not Path(args.config).exists():
        cfg = ExperimentConfig.builtin(args.config)
    else:
        cfg = ExperimentConfig.load(args.config)
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfg.with_overrides(**overrides) if overrides else cfg


def load_data(args, cfg: ExperimentConfig) -> IoDataset:
    """``--data`` CSV when given (its sidecar supplies the split), else the config's benchmark."""
    if getattr(args, "data", None):
        return load_csv_dataset(args.data)
    return ex.build_dataset(cfg)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(payload: dict):
    print(json.dumps(payload, sort_keys=True))


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    ds = ex.build_dataset(cfg)
    path = out / f"{cfg.experiment}.csv"
    save_csv_dataset(ds, path)
    cfg.dump(out / f"config_{cfg.experiment}.yaml")
    _emit({"dataset": str(path), "samples": len(ds), "split": ds.split})
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    ds = load_data(args, cfg)
    n = args.ensemble if args.ensemble is not None else cfg.ensemble
    pairs = fit_ensemble(ds, cfg.model_spec(args.model), cfg.train_config(), n, args.threads)
    paths = []
    for i, pair in enumerate(pairs):
        p = out / f"{args.model}_{i}.ckpt"
        save_checkpoint(pair, p)
        paths.append(str(p))
        hist = pair.history
        if hist:
            cols = {k: [h[k] for h in hist] for k in hist[0] if k != "epoch"}
            emit_series(out / f"{args.model}_{i}_history.csv", [h["epoch"] for h in hist], cols)
    cfg.dump(out / f"config_{cfg.experiment}.yaml")
    _emit({"checkpoints": paths, "best_epochs": [p.best_epoch for p in pairs]})
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    pairs = [load_checkpoint(p) for p in args.checkpoint]
    kinds = {p.spec.kind for p in pairs}
    if len(kinds) != 1:
        raise ConfigError(f"checkpoints mix model kinds {sorted(kinds)}")
    ds = load_data(args, cfg)
    if "test" not in ds.split or ds.split["test"][1] <= ds.split["test"][0]:
        raise DatasetFormatError("dataset has no test range")
    test = ds.segment("test")
    reports, preds = ex.evaluate(pairs, test, cfg.experiment, kinds.pop(), args.mode or cfg.data["evaluation"]["modes"],
                                 cfg.seed)
    emit_report(reports, out / "report.csv")
    for mode, pr in preds.items():
        emit_series(out / f"predictions_{mode.replace('-', '_')}.csv", range(pr.start, pr.start + len(pr)),
                    {"u": test.u[pr.start:], "y_reference": test.reference[pr.start:],
                     "y_measured": test.y[pr.start:], "mean": pr.mean, "var": pr.var})
    _emit({"report": str(out / "report.csv"),
           "rmse": {f"{r.mode}/{r.reference}": r.rmse for r in reports}})
    return 0


def cmd_analyze(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    student, teacher = load_checkpoint(args.student), load_checkpoint(args.teacher)
    if not teacher.spec.has_teacher:
        raise ConfigError(f"{args.teacher} holds a baseline model; --teacher needs a regenerative checkpoint")
    ds = load_data(args, cfg)
    seg_name = args.segment or cfg.data["evaluation"]["correlation_segment"]
    seg = ds.segment(seg_name)
    res = ex.representation_correlation(student, teacher, seg.u, seg.y)
    path = emit_matrix(out / "correlation.csv", res.matrix)
    _emit({"matrix": str(path), "segment": seg_name, "summary": res.summary,
           "degenerate_student_units": int(res.degenerate_a.sum()),
           "degenerate_teacher_units": int(res.degenerate_b.sum())})
    return 0


def cmd_gridsearch(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    ds = load_data(args, cfg)
    ranked = ex.run_grid(cfg, ds, out)
    _emit({"grid": str(out / f"grid_{cfg.experiment}.csv"), "best": ex.arch_string(ranked[0][0]),
           "score": ranked[0][1], "candidates": len(ranked)})
    return 0


def cmd_reproduce(args) -> int:
    overrides = _parse_set(args.set)
    out = _out_dir(args)
    results = ex.reproduce(out, seed=0 if args.seed is None else args.seed, threads=args.threads,
                           experiments=args.experiments or ex.REPRODUCE_EXPERIMENTS, overrides=overrides)
    _emit({"table": str(out / "table1.csv"), "report": str(out / "report.csv"),
           "rmse": {r.name: {m: r.report(m).rmse for m in ex.MODEL_KINDS} for r in results}})
    return 0


# ---------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser, out_default: str):
    p.add_argument("--config", help="YAML config file or built-in name (lgssm, narendra_li, wh)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config's seed)")
    p.add_argument("--out", default=out_default, help=f"output directory (default: {out_default})")
    p.add_argument("--threads", type=int, default=1, help="worker processes for ensembles (default: 1)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key, e.g. --set train.max_epochs=50 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    epilog = "configuration keys and defaults:\n" + describe_defaults()
    parser = argparse.ArgumentParser(
        prog="regenid", description="System identification with a recurrent teacher and a lag-vector student.",
        epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"regenid {__version__} ({BACKEND} kernel)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_, out_default):
        p = sub.add_parser(name, help=help_, description=help_, epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(p, out_default)
        return p

    p = add("simulate", "generate a benchmark dataset (CSV with split sidecar)", "data")
    p.set_defaults(func=cmd_simulate)

    p = add("train", "train an ensemble of models and write checkpoints", "run")
    p.add_argument("--model", choices=ex.MODEL_KINDS, default="regenerative")
    p.add_argument("--data", help="dataset CSV (default: simulate the config's benchmark)")
    p.add_argument("--ensemble", type=int, help="number of models (default: config 'ensemble')")
    p.set_defaults(func=cmd_train)

    p = add("evaluate", "evaluate checkpoints (averaged as an ensemble) on the test range", "eval")
    p.add_argument("checkpoint", nargs="+", help="checkpoint files of one model kind")
    p.add_argument("--data", help="dataset CSV with a test range (default: the config's benchmark)")
    p.add_argument("--mode", action="append", choices=("one-step", "free-run"),
                   help="prediction mode (repeatable; default: config 'evaluation.modes')")
    p.set_defaults(func=cmd_evaluate)

    p = add("analyze", "correlate a student's representation with a teacher's", "analysis")
    p.add_argument("--student", required=True, help="checkpoint whose lag-vector network is analyzed")
    p.add_argument("--teacher", required=True, help="regenerative checkpoint providing the teacher")
    p.add_argument("--data", help="dataset CSV (default: the config's benchmark)")
    p.add_argument("--segment", choices=("train", "val", "test"),
                   help="segment to analyze (default: config 'evaluation.correlation_segment')")
    p.set_defaults(func=cmd_analyze)

    p = add("gridsearch", "rank architectures by validation criterion", "grid")
    p.add_argument("--data", help="dataset CSV (default: the config's benchmark)")
    p.set_defaults(func=cmd_gridsearch)

    p = add("reproduce", "run all packaged experiments and write the summary table", "results")
    p.add_argument("--experiments", nargs="+", choices=ex.REPRODUCE_EXPERIMENTS,
                   help="subset of experiments (default: all)")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except DivergenceError as exc:
        code, err = 1, exc
    except (RegenError, FileNotFoundError, ValueError, yaml.YAMLError) as exc:
        code, err = 2, exc
    except OSError as exc:
        code, err = 1, exc
    print(json.dumps({"error": type(err).__name__, "message": str(err), "command": args.command}),
          file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
