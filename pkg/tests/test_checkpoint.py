from dataclasses import replace

import numpy as np
import pytest

from regenid.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from regenid.trainer import TrainConfig, fit

from conftest import arx_dataset, tiny_spec


@pytest.fixture(scope="module")
def pair():
    return fit(arx_dataset(n=600), tiny_spec(), TrainConfig(max_epochs=2, seq_len=16, batch_size=8, seed=1))


def test_round_trip_is_bit_exact(pair, tmp_path):
    save_checkpoint(pair, tmp_path / "a.ckpt")
    back = load_checkpoint(tmp_path / "a.ckpt")
    assert back.spec == pair.spec and back.config == pair.config and back.norm == pair.norm
    assert back.history == pair.history and back.best_epoch == pair.best_epoch
    assert list(back.params) == list(pair.params)
    for k in pair.params:
        assert back.params[k].tobytes() == pair.params[k].tobytes()
    save_checkpoint(back, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_manifest_layout(pair, tmp_path):
    raw = save_checkpoint(pair, tmp_path / "a.ckpt").read_bytes()
    assert raw.startswith(MAGIC)
    length_line, rest = raw[len(MAGIC):].split(b"\n", 1)
    manifest = rest[:int(length_line)].decode()
    assert "seed 1\n" in manifest
    rec = [l for l in manifest.splitlines() if l.startswith("param head.mean.W ")][0]
    _, name, shape, offset = rec.split(" ")
    data = rest[int(length_line):]
    arr = np.frombuffer(data, "<f8", count=pair.params[name].size, offset=int(offset))
    np.testing.assert_array_equal(arr.reshape(pair.params[name].shape), pair.params[name])
    assert shape == "x".join(map(str, pair.params[name].shape))


def test_predictions_survive_round_trip(pair, tmp_path, rng):
    save_checkpoint(pair, tmp_path / "a.ckpt")
    back = load_checkpoint(tmp_path / "a.ckpt")
    u, y = rng.normal(size=40), rng.normal(size=40)
    np.testing.assert_array_equal(back.predict(u, y).mean, pair.predict(u, y).mean)


def test_corrupt_files(tmp_path, pair):
    (tmp_path / "x.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.ckpt")
    raw = save_checkpoint(pair, tmp_path / "a.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="past end"):
        load_checkpoint(tmp_path / "t.ckpt")
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none.ckpt")
