"""Portable random streams.

All randomness in the package flows through :class:`PortableRNG`: a
Philox4x64-10 counter-based generator keyed by ``(seed, stream)``, with
uniforms taken from the top 53 bits of each 64-bit output and normals from
the Box-Muller transform. Both pieces are fully specified, so the noise
streams can be regenerated bit-for-bit by any other implementation.
"""
from __future__ import annotations

import numpy as np

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53

# stream ids used inside the package; fixed so datasets and fits are stable
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_EPS = 3
STREAM_VAL_EPS = 4
STREAM_PROCESS_NOISE = 10
STREAM_MEASUREMENT_NOISE = 11
STREAM_INPUT = 20


class PortableRNG:
    """Seeded uniform/normal source keyed by ``(seed, stream)``."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream & 0xFFFFFFFFFFFFFFFF],
                       dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)

    def _raw(self, n: int) -> np.ndarray:
        return np.asarray(self._bitgen.random_raw(n), dtype=np.uint64).reshape(n)

    def uniform(self, size=None, lo: float = 0.0, hi: float = 1.0):
        """Uniform draws on ``[lo, hi)``."""
        n = int(np.prod(size)) if size is not None else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        out = lo + (hi - lo) * u
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def normal(self, size=None):
        """Standard normal draws via Box-Muller (pairs consumed in order)."""
        n = int(np.prod(size)) if size is not None else 1
        m = (n + 1) // 2
        raw = self._raw(2 * m).reshape(m, 2)
        # u1 in (0, 1] keeps the log finite
        u1 = ((raw[:, 0] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (raw[:, 1] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty((m, 2))
        z[:, 0] = r * np.cos(_TWO_PI * u2)
        z[:, 1] = r * np.sin(_TWO_PI * u2)
        out = z.reshape(-1)[:n]
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of ``range(n)`` (argsort of uniform keys)."""
        keys = self._raw(n)
        return np.argsort(keys, kind="stable")


def derive_seed(seed: int, index: int) -> int:
    """Seed for the ``index``-th independent member (ensembles, grid points)."""
    return int(seed) + int(index)
