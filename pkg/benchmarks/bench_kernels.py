"""Compiled vs pure-Python event loops on the same workloads.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Each workload runs on both engines; outputs are checked for bit-identity
before timings are reported.
"""
import argparse
import time

import numpy as np

from fiapsim import _core, ph, rmf
from fiapsim.model import builtin
from fiapsim.ph import RateFunction

GL2 = builtin("gl_excitatory", K=2, horizon=2.0)
GN3 = builtin("gordon_newell", K=3, horizon=2.0)

WORKLOADS = {
    "rmf gl K=2 M=20 500 paths": lambda e: rmf.rmf_batch(GL2, 20, 500, 1, [1.0, 2.0], engine=e),
    "rmf gordon-newell K=3 M=10 500 paths": lambda e: rmf.rmf_batch(GN3, 10, 500, 2, [2.0], engine=e),
    "ph gl K=2 5000 paths, 200 cells": lambda e: ph.ph_batch(
        GL2, RateFunction.constant(2, 1.3, 2.0, 200), 5000, 3, [2.0], n_cells=200, engine=e),
}


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b):
    return a.keys() == b.keys() and all(
        np.asarray(a[k]).tobytes() == np.asarray(b[k]).tobytes() for k in a)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _core.HAVE_COMPILED:
        raise SystemExit("compiled core not built; run `pip install -e . --no-build-isolation`")
    print(f"{'workload':<40} {'python s':>9} {'cython s':>9} {'speedup':>8}  identical")
    for name, job in WORKLOADS.items():
        tp, op = best_of(lambda: job("python"), 1)
        tc, oc = best_of(lambda: job("cython"), args.repeat)
        print(f"{name:<40} {tp:9.3f} {tc:9.4f} {tp / tc:8.1f}  {same(op, oc)}")


if __name__ == "__main__":
    main()
