"""Time the compiled and numpy kernel backends on pipeline-sized inputs.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the median time of each backend and the
speedup. Outputs are also compared so a mismatch is reported.
"""

import argparse
import statistics
import time

import numpy as np

from hypotraj import kernels


def cases(rng):
    pts = rng.uniform(-40, 40, (50_000, 2))
    n_groups, per = 64, 64  # 8 agents x 8 samples per episode
    pos = rng.uniform(-15, 15, (n_groups * per, 2))
    group = np.repeat(np.arange(n_groups), per)
    owner = group * 8 + np.tile(np.repeat(np.arange(8), 8), n_groups)
    grid = rng.random((80, 80, 4))
    square = np.array([[-20.0, -20.0], [20.0, -20.0], [20.0, 20.0], [-20.0, 20.0]])
    return {
        "nearest_cell": (pts, np.array([-40.0, -40.0]), 1.0, 80, 80),
        "polar_bins": (pts / 4, 6, 8, 0.5, 16.0),
        "polar_pool_coo": (pos, group, owner, 6, 8, 0.5, 16.0),
        "rotate_nearest": (grid, np.array([-40.0, -40.0]), 1.0, 0.3, np.array([1.0, 2.0])),
        "points_in_polygon": (pts, square),
    }


def timed(fn, args, repeat):
    out, times = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    impls = kernels.backends()
    names = [n for n in ("python", "cython") if n in impls]
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(names)}")
    print(f"{'kernel':<18} " + " ".join(f"{n + ' ms':>12}" for n in names) + f" {'speedup':>8} match")
    for kernel, kargs in cases(np.random.default_rng(args.seed)).items():
        results = {n: timed(getattr(impls[n], kernel), kargs, args.repeat) for n in names}
        cells = " ".join(f"{1e3 * results[n][1]:12.2f}" for n in names)
        if len(names) == 2:
            speed = f"{results['python'][1] / results['cython'][1]:8.1f}x"
            match = "yes" if same(results["python"][0], results["cython"][0]) else "NO"
        else:
            speed, match = f"{'n/a':>9}", "n/a"
        print(f"{kernel:<18} {cells} {speed} {match}")


if __name__ == "__main__":
    main()
