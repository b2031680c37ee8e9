import json

import numpy as np
import pytest
import yaml

from regenid import cli
from regenid.benchmarks import load_csv_dataset
from regenid.checkpoint import load_checkpoint
from regenid.config import flatten, DEFAULTS
from regenid.metrics import REPORT_COLUMNS

TINY = {
    "experiment": "tiny", "ensemble": 2,
    "benchmark": {"name": "lgssm", "n_samples": 800, "test_input": {"n_samples": 200}},
    "model": {"lags": {"n_b": 2, "n_a": 2}, "student": [4, 6, 1], "teacher": [1, 4, 8, 6, 1],
              "baseline": [4, 8, 6, 1]},
    "train": {"max_epochs": 1, "seq_len": 16, "batch_size": 8},
    "grid": {"depths": [1], "widths": [4, 8], "budget_epochs": 1},
}


@pytest.fixture()
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return str(path)


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_is_byte_identical(tmp_path, tiny_cfg, capsys):
    for d in ("a", "b"):
        code, out, _ = run(["simulate", "--config", tiny_cfg, "--seed", "3", "--out", str(tmp_path / d)], capsys)
        assert code == 0 and json.loads(out)["samples"] == 1000
    a, b = tmp_path / "a" / "tiny.csv", tmp_path / "b" / "tiny.csv"
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a" / "tiny.csv.meta").read_bytes() == (tmp_path / "b" / "tiny.csv.meta").read_bytes()
    ds = load_csv_dataset(a)
    assert ds.seed == 3 and ds.split["test"] == (800, 1000)


def test_builtin_config_name_and_set(tmp_path, capsys):
    code, out, _ = run(["simulate", "--config", "wh", "--set", "benchmark.n_samples=300",
                        "--set", "benchmark.test_input.n_samples=1000", "--out", str(tmp_path)], capsys)
    assert code == 0 and json.loads(out)["samples"] == 1300
    dumped = yaml.safe_load((tmp_path / "config_wh.yaml").read_text())
    assert dumped["benchmark"]["n_samples"] == 300


def test_train_evaluate_analyze_pipeline(tmp_path, tiny_cfg, capsys):
    code, out, _ = run(["simulate", "--config", tiny_cfg, "--out", str(tmp_path / "data")], capsys)
    data = str(tmp_path / "data" / "tiny.csv")
    ckpts = {}
    for kind in ("baseline", "regenerative"):
        code, out, _ = run(["train", "--config", tiny_cfg, "--model", kind, "--data", data,
                            "--out", str(tmp_path / kind)], capsys)
        assert code == 0
        ckpts[kind] = json.loads(out)["checkpoints"]
        assert len(ckpts[kind]) == 2
        pair = load_checkpoint(ckpts[kind][0])
        assert pair.spec.kind == kind and len(pair.history) == 1
    code, out, _ = run(["evaluate", *ckpts["regenerative"], "--config", tiny_cfg, "--data", data,
                        "--out", str(tmp_path / "eval")], capsys)
    assert code == 0
    header = (tmp_path / "eval" / "report.csv").read_text().splitlines()[0]
    assert header == ",".join(REPORT_COLUMNS)
    assert set(json.loads(out)["rmse"]) == {"one-step/clean", "one-step/noisy", "free-run/clean", "free-run/noisy"}
    assert (tmp_path / "eval" / "predictions_free_run.csv").exists()
    code, out, _ = run(["analyze", "--student", ckpts["baseline"][0], "--teacher", ckpts["regenerative"][0],
                        "--config", tiny_cfg, "--data", data, "--out", str(tmp_path / "an")], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["segment"] == "val" and 0.0 <= res["summary"] <= 1.0
    rows = (tmp_path / "an" / "correlation.csv").read_text().splitlines()[1:]
    assert len(rows) == 6 and all(abs(float(v)) <= 1.0 for r in rows for v in r.split(",")[1:])


def test_gridsearch(tmp_path, tiny_cfg, capsys):
    code, out, _ = run(["gridsearch", "--config", tiny_cfg, "--out", str(tmp_path)], capsys)
    assert code == 0 and json.loads(out)["candidates"] == 2
    lines = (tmp_path / "grid_tiny.csv").read_text().splitlines()
    assert lines[0] == "rank,architecture,score" and len(lines) == 3


def test_help_lists_config_keys(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for key in flatten(DEFAULTS):
        assert key in text


def test_unknown_flag_rejected(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--no-such-flag"])
    assert exc.value.code == 2
    assert "--no-such-flag" in capsys.readouterr().err


@pytest.mark.parametrize("argv, error", [
    (["simulate", "--set", "train.lrr=1"], "ConfigError"),
    (["simulate", "--config", "/nonexistent/c.yaml"], "FileNotFoundError"),
    (["train", "--data", "/nonexistent/d.csv"], "FileNotFoundError"),
    (["evaluate", "/nonexistent/x.ckpt"], "FileNotFoundError"),
])
def test_errors_are_json_on_stderr(argv, error, tmp_path, capsys):
    code, out, err = run(argv + ["--out", str(tmp_path)], capsys)
    assert code == 2 and out == ""
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"] == error and payload["command"] == argv[0] and payload["message"]


def test_divergence_exits_one(tmp_path, tiny_cfg, capsys, monkeypatch):
    from regenid.errors import DivergenceError

    def diverge(*args, **kwargs):
        raise DivergenceError(3)

    monkeypatch.setattr(cli, "fit_ensemble", diverge)
    code, out, err = run(["train", "--config", tiny_cfg, "--out", str(tmp_path)], capsys)
    assert code == 1 and out == ""
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload == {"error": "DivergenceError", "message": "epoch 3: non-finite loss", "command": "train"}


def test_overflowing_data_is_an_input_error(tmp_path, tiny_cfg, capsys):
    from regenid.benchmarks import IoDataset, save_csv_dataset

    rng = np.random.default_rng(0)
    y = rng.normal(size=1000)
    y[500] = 1e300
    save_csv_dataset(IoDataset(rng.normal(size=1000), y), tmp_path / "huge.csv")
    code, _, err = run(["train", "--config", tiny_cfg, "--data", str(tmp_path / "huge.csv"),
                        "--out", str(tmp_path)], capsys)
    assert code == 2 and json.loads(err.strip().splitlines()[-1])["error"] == "NonFiniteError"
