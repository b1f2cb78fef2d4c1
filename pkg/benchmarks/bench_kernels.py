"""Time every hot kernel under the numba and numpy backends.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat N]``.  Prints one row per
kernel with the best-of-N wall time per backend and the speed-up; the numba
column excludes compilation (one warm-up call per kernel).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from dpgranular import ClassSpec, builtin_granularity, discrete_gaussian_mechanism, enumerate_class, product_compose
from dpgranular import kernels
from dpgranular._backend import HAVE_NUMBA
from dpgranular.lab import ZC_ALPHA_GRID
from dpgranular.variants import phi_inv_upper


def workloads():
    big = enumerate_class(ClassSpec.max_size("abcde", 5))  # 252 members
    g = builtin_granularity(big, "unbounded")
    indptr, indices = g.csr
    dist = kernels.bfs_all_pairs(indptr, indices)
    counts = np.array([[db.multiplicity(r) for r in "abcde"] for db in big], dtype=np.int64)
    labels = np.array([db.multiplicity("a") for db in big], dtype=np.int64)
    n_labels = int(labels.max()) + 1

    small = enumerate_class(ClassSpec.max_size("ab", 3))  # 10 members
    m = discrete_gaussian_mechanism(small, lambda db: db.size, 1.0, (-12, 15))
    joint = product_compose([m, m])  # 784 outputs
    grid = np.linspace(0.0, 1.0, 1001)
    mu = np.ones((len(small), len(small)))
    eps = np.full((len(small), len(small)), 0.5)
    alphas = np.array(ZC_ALPHA_GRID)
    zgrid = phi_inv_upper(grid)

    return [
        ("bfs_all_pairs (n=252)", lambda b: kernels.bfs_all_pairs(indptr, indices, backend=b)),
        ("pairwise_l1 (n=252)", lambda b: kernels.pairwise_l1(counts, backend=b)),
        ("fiber_min (n=252)", lambda b: kernels.fiber_min(dist, labels, n_labels, backend=b)),
        ("triangle_violation (n=252)", lambda b: kernels.triangle_violation(dist, backend=b)),
        ("pairwise_max_divergence (10x784)", lambda b: kernels.pairwise_max_divergence(joint.log_table, backend=b)),
        ("pairwise_renyi (10x784, 6 alphas)", lambda b: kernels.pairwise_renyi(joint.log_table, alphas, backend=b)),
        ("pairwise_hockey_stick (10x784)", lambda b: kernels.pairwise_hockey_stick(joint.table, eps, backend=b)),
        ("pairwise_tradeoff_slack (10x784, 1001 grid)",
         lambda b: kernels.pairwise_tradeoff_slack(joint.log_table, grid, zgrid, mu, backend=b)),
    ]


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
    print(f"{'kernel':46s}" + "".join(f"{b:>12s}" for b in backends) + ("   speed-up" if len(backends) == 2 else ""))
    for name, fn in workloads():
        row = {}
        for b in backends:
            fn(b)  # warm-up (JIT compile for numba)
            row[b] = best_of(lambda: fn(b), args.repeat)
        cells = "".join(f"{row[b] * 1e3:10.2f}ms" for b in backends)
        extra = f"   {row['numpy'] / row['numba']:8.1f}x" if len(backends) == 2 else ""
        print(f"{name:46s}{cells}{extra}")


if __name__ == "__main__":
    main()
