"""Time the numba and numpy transport kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--out bench.csv]

Both variants are imported from one process (the private ``_np_*`` and
``_nb_*`` names), so the env flag does not matter here. The first numba
call is excluded from timing to keep JIT compilation out of the numbers.
"""
import argparse
import csv
import sys
import time

import numpy as np

from otjr import _kernels as K


def _time(fn, args, repeat):
    fn(*args)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    for B, k in ((128, 32), (512, 128)):
        pmu, pnu = rng.normal(size=(B, k)), rng.normal(size=(B, k))
        yield f"sw_match B={B} K={k}", "sw_match", (pmu, pnu)
    for B in (6, 32):
        x, y = rng.normal(size=(B, 3)), rng.normal(size=(B, 3))
        cost = K._np_pairwise_l2(x, y)
        a = np.full(B, 1.0 / B)
        args = (cost, 0.05, a, a.copy(), np.zeros(B), np.zeros(B), 500, 0.0)
        yield f"sinkhorn_log B={B} 500 sweeps", "sinkhorn_log", args
    cost = K._np_pairwise_l2(rng.normal(size=(8, 3)), rng.normal(size=(8, 3)))
    yield "assignment_min B=8", "assignment_min", (cost,)
    x, y = rng.normal(size=(256, 10)), rng.normal(size=(256, 10))
    yield "pairwise_l2 256x256x10", "pairwise_l2", (x, y)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    if K.numba is None:
        print("numba not importable; nothing to compare", file=sys.stderr)
        return 1
    rows = []
    for label, name, fargs in cases(np.random.default_rng(args.seed)):
        t_np = _time(getattr(K, f"_np_{name}"), fargs, args.repeat)
        t_nb = _time(getattr(K, f"_nb_{name}"), fargs, args.repeat)
        rows.append((label, t_np * 1e3, t_nb * 1e3, t_np / t_nb))
        print(f"{label:<28} numpy {t_np * 1e3:9.3f} ms  numba {t_nb * 1e3:9.3f} ms  x{t_np / t_nb:6.1f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "numpy_ms", "numba_ms", "speedup"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
