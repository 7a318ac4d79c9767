"""Time the numba and numpy flavours of the table kernels.

Usage: ``python benchmarks/bench_kernels.py [--samples N] [--repeat R]``.
Each kernel is warmed up once (numba compiles on first call) and the best
of ``R`` runs is reported.
"""

import argparse
import time

import numpy as np

from hpbrdf import kernels
from hpbrdf.table import DESK_DIMS


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=200_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    n = args.samples
    lam, nphi, nd, nh = DESK_DIMS
    band = rng.integers(0, lam, n)
    pos = rng.uniform([0, 0, 0], [nphi - 1, nd - 1, nh - 1], (n, 3))
    vals = rng.normal(size=(n, 16))
    table = rng.normal(size=DESK_DIMS + (16,))
    query = rng.uniform([0, 0, 0, 0], [lam - 1, nphi - 1, nd - 1, nh - 1], (n, 4))

    def splat_with(fn):
        def run():
            fn(np.zeros(DESK_DIMS + (16,)), np.zeros(DESK_DIMS), band, pos, vals)

        return run

    if not kernels.NUMBA_AVAILABLE:
        print("numba not importable; only the numpy timings are meaningful")
    print(f"{n:,} samples into a {'x'.join(map(str, DESK_DIMS))} table, best of {args.repeat}")
    print(f"{'kernel':<8}{'numpy s':>10}{'numba s':>10}{'speedup':>9}")
    for name, np_fn, nb_fn in (
        ("splat", splat_with(kernels.splat_numpy), splat_with(kernels.splat_numba)),
        ("gather", lambda: kernels.gather_numpy(table, query), lambda: kernels.gather_numba(table, query)),
    ):
        t_np = best_of(np_fn, args.repeat)
        t_nb = best_of(nb_fn, args.repeat)
        print(f"{name:<8}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
