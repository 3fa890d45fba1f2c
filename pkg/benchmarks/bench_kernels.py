"""Time the numba and numpy implementations of the hot loops side by side.

    python benchmarks/bench_kernels.py --n 50000 --repeat 5

Both backends run on identical inputs and the outputs are checked for
bitwise equality before any timing is reported.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from qspace import _kernels


def interp_inputs(rng, n):
    lens = np.array([20, 7, 7, 4], dtype=np.int64)
    axes = np.zeros((_kernels.MAX_AXES, lens.max()))
    for d, m in enumerate(lens):
        axes[d, :m] = np.cumsum(rng.uniform(1, 50, m))
    strides = np.array([lens[1] * lens[2] * lens[3], lens[2] * lens[3], lens[3], 1], dtype=np.int64)
    values = rng.uniform(0.01, 2.0, int(np.prod(lens)))
    lo, hi = axes[np.arange(4), 0], axes[np.arange(4), lens - 1]
    q = rng.uniform(lo - 5, hi + 5, size=(n, 4))
    return axes, lens, strides, values, q


def stage_inputs(rng, n, dmax=6, R=5, L=10, K=3, E=3):
    first = rng.uniform(0.01, 1.0, (R, L, L, K, E))
    rest = rng.uniform(0.01, 1.0, (R, L, L, K, E))
    res = rng.integers(0, R, n)
    cin0 = rng.integers(0, L, n)
    depth = rng.integers(1, dmax + 1, n)
    k = rng.integers(0, K, (n, dmax))
    w = rng.integers(0, L, (n, dmax))
    e = rng.integers(0, E, (n, dmax))
    return first, rest, res, cin0, depth, k, w, e


def loss_inputs(rng, n, dmax=6, L=10, K=3, E=3):
    layer = rng.uniform(0, 0.1, (K, L, E))
    depth_term = rng.uniform(0, 0.3, dmax)
    didx = rng.integers(0, dmax, n)
    return layer, depth_term, didx, didx + 1, rng.integers(0, K, (n, dmax)), \
        rng.integers(0, L, (n, dmax)), rng.integers(0, E, (n, dmax))


def timeit(fn, repeat):
    fn()  # warm-up (includes numba compilation)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=50_000, help="rows per call")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    impls = _kernels.backends()
    if "numba" not in impls:
        print("numba backend unavailable (QSPACE_DISABLE_NUMBA set?); timing numpy only")
    rng = np.random.default_rng(args.seed)
    ia, sa, la = interp_inputs(rng, args.n), stage_inputs(rng, args.n), loss_inputs(rng, args.n)

    def run(name, i):
        interp, stage_latency, stage_loss = impls[name]
        if i == 0:
            return lambda: interp(*ia)
        if i == 1:
            return lambda: stage_latency(*sa, np.zeros(args.n))
        return lambda: stage_loss(*la, np.zeros(args.n))

    def result(name, i):
        if i == 0:
            return run(name, 0)()
        out = np.zeros(args.n)
        (impls[name][i])(*(sa if i == 1 else la), out)
        return out

    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in impls) + f"{'speedup':>10}  equal")
    for i, label in enumerate(("interp", "stage_latency", "stage_loss")):
        times = {b: timeit(run(b, i), args.repeat) for b in impls}
        same = ""
        if len(impls) == 2:
            same = str(np.array_equal(result("numpy", i), result("numba", i)))
        speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        print(f"{label:<16}" + "".join(f"{1e3 * t:>10.2f}ms" for t in times.values())
              + f"{speed:>9.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
