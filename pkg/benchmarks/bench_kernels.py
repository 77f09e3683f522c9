"""Time the batched registration kernels: compiled extension vs numpy.

    python benchmarks/bench_kernels.py --rows 20000 --repeat 5
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from frechet_quotient import kernels
from frechet_quotient.actions import TIE_RTOL, SwapR2, TorusTranslation

SHAPES = {"swap": SwapR2(), "torus16": TorusTranslation((16,)), "torus64": TorusTranslation((64,)),
          "torus128": TorusTranslation((128,)), "torus8x8": TorusTranslation((8, 8))}


def bench(a, rows, repeat, backend, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((rows, a.dim))
    m = rng.standard_normal(a.dim)

    def run():
        idx, _ = kernels.finite_sup_inner(X, m, a.perm, TIE_RTOL, backend=backend)
        kernels.finite_gather(X, a.perm, idx, backend=backend)

    run()  # warm up
    return min(timeit.repeat(run, number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--actions", default=",".join(SHAPES), help="comma separated subset of " + ",".join(SHAPES))
    args = p.parse_args(argv)

    backends = ["numpy"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing numpy only", file=sys.stderr)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["action", "group_order", "dim", "rows"] + [f"{b}_seconds" for b in backends] + ["speedup"])
    for name in args.actions.split(","):
        a = SHAPES[name]
        times = [bench(a, args.rows, args.repeat, b) for b in backends]
        speedup = times[0] / times[-1] if len(times) > 1 else 1.0
        w.writerow([name, a.order, a.dim, args.rows] + [f"{t:.6f}" for t in times] + [f"{speedup:.2f}"])


if __name__ == "__main__":
    main()
