"""Checkpoint container for a :class:`~regenid.trainer.TrainedPair`.

Layout::

    REGENID-CHECKPOINT 1\\n
    <manifest length in bytes>\\n
    <manifest: UTF-8 text, one record per line>
    <parameter data: float64 little-endian, row-major, concatenated>

Manifest records are ``seed <int>``, ``best_epoch <int>``, ``spec <json>``,
``config <json>``, ``norm <json>``, ``history <json>`` and one
``param <name> <shape> <offset>`` line per array, where ``shape`` is
``d0xd1`` (``-`` for a scalar) and ``offset`` is the byte offset into the
data section. Floats in JSON records use shortest round-trip repr, so a
save/load cycle is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .arch import ModelSpec
from .errors import RegenError

MAGIC = b"REGENID-CHECKPOINT 1\n"


class CheckpointError(RegenError):
    pass


def _shape_str(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "-"


def _parse_shape(s: str) -> tuple:
    return () if s == "-" else tuple(int(d) for d in s.split("x"))


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def save_checkpoint(pair, path) -> Path:
    """Write ``pair`` to ``path``; output bytes depend only on the pair's contents."""
    path = Path(path)
    lines = [
        f"seed {pair.config.seed}",
        f"best_epoch {pair.best_epoch}",
        f"spec {_dumps(pair.spec.to_dict())}",
        f"config {_dumps(pair.config.to_dict())}",
        f"norm {_dumps(pair.norm.to_dict())}",
        f"history {_dumps(pair.history)}",
    ]
    blobs, offset = [], 0
    for name, value in pair.params.items():
        if " " in name or "\n" in name:
            raise CheckpointError(f"parameter name {name!r} contains whitespace")
        arr = np.ascontiguousarray(value, dtype="<f8")
        lines.append(f"param {name} {_shape_str(arr.shape)} {offset}")
        blob = arr.tobytes(order="C")
        blobs.append(blob)
        offset += len(blob)
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{len(manifest)}\n".encode("ascii"))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`."""
    from .trainer import Normalizer, TrainConfig, TrainedPair

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a regenid checkpoint")
    pos = len(MAGIC)
    nl = raw.index(b"\n", pos)
    try:
        mlen = int(raw[pos:nl])
    except ValueError:
        raise CheckpointError(f"{path}: bad manifest length") from None
    start = nl + 1
    manifest = raw[start:start + mlen].decode("utf-8")
    data = raw[start + mlen:]
    fields, params = {}, {}
    for lineno, line in enumerate(manifest.splitlines(), start=1):
        key, _, rest = line.partition(" ")
        if key == "param":
            try:
                name, shape_s, off_s = rest.split(" ")
                shape, off = _parse_shape(shape_s), int(off_s)
            except ValueError:
                raise CheckpointError(f"{path}: malformed param record on manifest line {lineno}") from None
            n = int(np.prod(shape)) if shape else 1
            if off < 0 or off + 8 * n > len(data):
                raise CheckpointError(f"{path}: parameter {name} extends past end of data")
            params[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape)
        else:
            fields[key] = rest
    for key in ("seed", "best_epoch", "spec", "config", "norm", "history"):
        if key not in fields:
            raise CheckpointError(f"{path}: manifest lacks {key!r}")
    return TrainedPair(
        params=params,
        spec=ModelSpec.from_dict(json.loads(fields["spec"])),
        config=TrainConfig(**json.loads(fields["config"])),
        norm=Normalizer(**json.loads(fields["norm"])),
        history=json.loads(fields["history"]),
        best_epoch=int(fields["best_epoch"]),
    )
