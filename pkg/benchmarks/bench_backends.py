"""Compare the compiled and numpy teacher-recurrence kernels.

Times the fused recurrence forward and backward passes on their own, then
one full training step (joint loss plus gradients) for the LGSSM
architecture. Both backends must agree on the outputs; the script exits
nonzero if they do not.

    python3 benchmarks/bench_backends.py [--seq-len 32] [--batch 32] [--repeat 20]
"""
import argparse
import sys
import time

import numpy as np

from regenid import _backend, _scan_py
from regenid.arch import init_params
from regenid.config import ExperimentConfig
from regenid.trainer import loss_and_grads


def best_of(fn, repeat: int) -> float:
    """Minimum wall time over ``repeat`` calls, in milliseconds."""
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * min(times)


def kernel_inputs(T: int, B: int, H: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    dy, dz = 1, H
    y = rng.normal(size=(T, B, dy))
    eps = rng.normal(size=(T, B, dz))
    shapes = [(H, dy + dz)] * 3 + [(H, H)] * 3 + [(H,)] * 3 + [(H, dy + H), (H,), (dz, H), (dz,), (dz, H), (dz,)]
    weights = [0.3 * rng.normal(size=s) for s in shapes]
    dout = rng.normal(size=(T, B, H + 3 * dz))
    return y, eps, weights, dout


def bench_kernel(mod, T, B, H, repeat):
    y, eps, w, dout = kernel_inputs(T, B, H)
    out, cache = mod.scan_forward(y, eps, *w, -10.0, 10.0)
    fwd = best_of(lambda: mod.scan_forward(y, eps, *w, -10.0, 10.0), repeat)
    bwd = best_of(lambda: mod.scan_backward(dout, y, eps, *w, -10.0, 10.0, out, cache), repeat)
    grads = mod.scan_backward(dout, y, eps, *w, -10.0, 10.0, out, cache)
    return fwd, bwd, np.asarray(out), [np.asarray(g) for g in grads]


def bench_step(mod, T, B, repeat):
    cfg = ExperimentConfig.builtin("lgssm")
    spec = cfg.model_spec("regenerative")
    params = init_params(spec, 0)
    rng = np.random.default_rng(1)
    y_win = rng.normal(size=(T, B, 1))
    X_rows = rng.normal(size=(T * B, spec.lags.dim()))
    Y_rows = y_win.reshape(-1, 1)
    eps = rng.normal(size=(T, B, spec.z_dim))
    step = lambda: loss_and_grads(params, spec, "distance", y_win, X_rows, Y_rows, eps, kernels=mod)
    loss, grads, _ = step()
    return best_of(step, repeat), loss, grads


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seq-len", type=int, default=32)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--hidden", type=int, default=25, help="GRU width for the kernel-only timing")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    if "compiled" not in _backend.available():
        print("compiled kernel not built; only the numpy backend is available")
        mods = [_scan_py]
    else:
        mods = [_backend.load("compiled"), _scan_py]

    T, B = args.seq_len, args.batch
    print(f"kernel  T={T} B={B} H={args.hidden}   (best of {args.repeat}, ms)")
    print(f"{'backend':<10}{'forward':>10}{'backward':>10}{'step':>10}")
    rows, ok = {}, True
    for mod in mods:
        fwd, bwd, out, grads = bench_kernel(mod, T, B, args.hidden, args.repeat)
        step, loss, sgrads = bench_step(mod, T, B, args.repeat)
        rows[mod.NAME] = (out, grads, loss, sgrads)
        print(f"{mod.NAME:<10}{fwd:>10.3f}{bwd:>10.3f}{step:>10.3f}")
    if len(rows) == 2:
        (o1, g1, l1, s1), (o2, g2, l2, s2) = rows["compiled"], rows["python"]
        err = max([np.max(np.abs(o1 - o2))] + [np.max(np.abs(a - b)) for a, b in zip(g1, g2)]
                  + [abs(l1 - l2)] + [np.max(np.abs(s1[k] - s2[k])) for k in s1])
        ok = err < 1e-8
        print(f"max abs difference between backends: {err:.3e} ({'ok' if ok else 'MISMATCH'})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
