"""Experiment configuration: a nested YAML document validated against :data:`DEFAULTS`.

Every key has a default; a config file only overrides what it needs. Unknown
keys are rejected with the dotted key name. The fully materialized config is
written next to every run's outputs.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .arch import LagSpec, LossWeights, ModelSpec
from .errors import ConfigError

BENCHMARKS = ("lgssm", "narendra_li", "wh", "csv")

# Schema and defaults in one place. ``None`` marks keys whose value may be null.
DEFAULTS: dict = {
    "experiment": "lgssm",
    "seed": 0,
    "ensemble": 1,
    "benchmark": {
        "name": "lgssm",
        "n_samples": 50000,
        "split": {"train": 0.8, "val": 0.2},
        "input": {"kind": "uniform", "lo": -2.5, "hi": 2.5, "f0": 0.0, "f1": 0.05, "amplitude": 1.0,
                  "band": [0.0, 0.04], "n_tones": 40, "rms": 1.0, "fade": 0.05},
        "test_input": {"kind": "sine", "n_samples": 1000, "lo": -2.5, "hi": 2.5, "f0": 0.0, "f1": 0.05,
                       "amplitude": 1.0, "band": [0.0, 0.04], "n_tones": 40, "rms": 1.0, "fade": 0.05},
        "noise": {"train": True, "test": False, "lgssm_process_var": 0.5, "lgssm_meas_var": 1.0,
                  "nl_std": 0.1, "wh_process_std": 0.1, "wh_meas_std": 0.0},
        "csv": {"path": None, "test_path": None},
    },
    "model": {
        "lags": {"n_b": 10, "n_a": 5},
        "student": [15, 30, 1],
        "teacher": [1, 15, 60, 30, 1],
        "baseline": [15, 60, 30, 1],
        "teacher_projection": "dense",
    },
    "weights": {"alpha1": 1.0, "alpha2": 1.0, "alpha3": 1.0},
    "train": {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "max_epochs": 200, "patience": 10,
              "seq_len": 64, "batch_size": 32, "align": "distance"},
    "grid": {"model": "baseline", "depths": [1, 2, 3, 4, 5], "widths": [10, 20, 30, 40, 50, 60, 70, 80, 90, 100],
             "budget_epochs": 30, "pair_with_baseline": False},
    "evaluation": {"modes": ["one-step", "free-run"], "correlation_segment": "val"},
}

# Keys whose value is a list (not a nested section) or may be null.
_LEAF_TYPES = {
    "benchmark.csv.path": (str, type(None)),
    "benchmark.csv.test_path": (str, type(None)),
}


def flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _check_type(key: str, default, value):
    if key in _LEAF_TYPES:
        ok = isinstance(value, _LEAF_TYPES[key])
    elif isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"config key {key!r} has invalid value {value!r} (expected like {default!r})")


def _float_or_str(v: str):
    try:
        return float(v)
    except ValueError:
        return v


def merge(base: dict, override: dict, prefix: str = "") -> dict:
    """Recursively apply ``override`` onto a copy of ``base``; unknown keys are errors."""
    out = copy.deepcopy(base)
    if not isinstance(override, dict):
        raise ConfigError(f"config section {prefix.rstrip('.') or '<root>'!r} must be a mapping")
    for k, v in override.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[k], dict):
            out[k] = merge(base[k], v if v is not None else {}, key + ".")
        else:
            if isinstance(base[k], float) and isinstance(v, str):
                v = _float_or_str(v)  # YAML 1.1 reads "1e-4" as a string
            _check_type(key, base[k], v)
            out[k] = float(v) if isinstance(base[k], float) and not isinstance(v, bool) else v
    return out


@dataclass
class ExperimentConfig:
    data: dict

    # ------------------------------------------------------------ loading

    @classmethod
    def from_dict(cls, d: Optional[dict] = None, base: Optional[dict] = None) -> "ExperimentConfig":
        cfg = cls(merge(DEFAULTS if base is None else base, d or {}))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        return cls.from_dict(raw or {})

    @classmethod
    def builtin(cls, name: str) -> "ExperimentConfig":
        """One of the packaged experiment configs: lgssm, narendra_li, wh."""
        try:
            text = resources.files("regenid").joinpath("configs").joinpath(f"{name}.yaml").read_text()
        except FileNotFoundError:
            raise ConfigError(f"no built-in config named {name!r}") from None
        return cls.from_dict(yaml.safe_load(text) or {})

    def with_overrides(self, **dotted: Any) -> "ExperimentConfig":
        """Copy with dotted-key overrides, e.g. ``with_overrides(**{"train.max_epochs": 1})``."""
        override: dict = {}
        for key, value in dotted.items():
            node = override
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = value
        return ExperimentConfig.from_dict(override, base=self.data)

    def get(self, dotted: str):
        node = self.data
        for p in dotted.split("."):
            node = node[p]
        return node

    # ------------------------------------------------------------ typed views

    def validate(self):
        b = self.data["benchmark"]
        if b["name"] not in BENCHMARKS:
            raise ConfigError(f"config key 'benchmark.name' must be one of {BENCHMARKS}, got {b['name']!r}")
        if b["name"] == "csv" and not b["csv"]["path"]:
            raise ConfigError("config key 'benchmark.csv.path' is required for the csv benchmark")
        if self.data["ensemble"] < 1:
            raise ConfigError("config key 'ensemble' must be >= 1")
        if self.data["evaluation"]["correlation_segment"] not in ("train", "val", "test"):
            raise ConfigError("config key 'evaluation.correlation_segment' must be train, val or test")
        for m in self.data["evaluation"]["modes"]:
            if m not in ("one-step", "free-run"):
                raise ConfigError(f"config key 'evaluation.modes' has unknown mode {m!r}")
        if self.data["grid"]["model"] not in ("baseline", "regenerative"):
            raise ConfigError("config key 'grid.model' must be 'baseline' or 'regenerative'")
        # Building the specs checks tuple/lag consistency.
        self.model_spec("regenerative")
        self.model_spec("baseline")
        self.train_config()

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def experiment(self) -> str:
        return str(self.data["experiment"])

    @property
    def ensemble(self) -> int:
        return int(self.data["ensemble"])

    @property
    def lags(self) -> LagSpec:
        lg = self.data["model"]["lags"]
        return LagSpec(int(lg["n_b"]), int(lg["n_a"]))

    @property
    def weights(self) -> LossWeights:
        w = self.data["weights"]
        return LossWeights(w["alpha1"], w["alpha2"], w["alpha3"])

    def model_spec(self, kind: str) -> ModelSpec:
        m = self.data["model"]
        if kind == "regenerative":
            return ModelSpec("regenerative", self.lags, tuple(m["student"]), tuple(m["teacher"]),
                             tuple(m["baseline"]), m["teacher_projection"], self.weights)
        if kind == "baseline":
            w = self.weights
            return ModelSpec("baseline", self.lags, tuple(m["student"]), None, tuple(m["baseline"]),
                             m["teacher_projection"], LossWeights(w.alpha1 if w.alpha1 > 0 else 1.0, 0.0, 0.0))
        raise ConfigError(f"model kind must be 'regenerative' or 'baseline', got {kind!r}")

    def train_config(self, seed: Optional[int] = None):
        from .trainer import TrainConfig

        return TrainConfig(seed=self.seed if seed is None else seed, **self.data["train"])

    def dump(self, path) -> Path:
        path = Path(path)
        path.write_text(yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False))
        return path


def describe_defaults() -> str:
    """One ``key = default`` line per config key (used by ``--help``)."""
    return "\n".join(f"  {k} = {v!r}" for k, v in flatten(DEFAULTS).items())
