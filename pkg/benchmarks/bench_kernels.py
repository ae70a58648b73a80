"""Time the compiled and numpy kernels on Baby-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 20] [--dim 64]

Shapes: a 26,495-node bipartite adjacency with 321,584 stored entries
(19,445 users, 7,050 items, 160,792 interactions), a 7,050-item graph with
20 entries per row (two fused 10-NN graphs), and one 2,048-triple batch
scattered into the item gradient.
"""
import argparse
import timeit

import numpy as np

from freedomrec._backend import available_backends
from freedomrec.interaction_graph import InteractionMatrix, build_adjacency
from freedomrec.sparse_core import CsrMatrix

M, N, E = 19445, 7050, 160792


def cases(dim, rng):
    flat = rng.choice(M * N, size=E, replace=False)
    A = build_adjacency(InteractionMatrix.from_pairs(flat // N, flat % N, M, N)).normalized
    x_nodes = rng.standard_normal((M + N, dim))

    cols = np.sort(np.argsort(rng.random((N, N)), axis=1)[:, :20], axis=1)
    S = CsrMatrix(
        (N, N), np.arange(0, 20 * N + 1, 20), cols.ravel(), rng.random(20 * N) / 20
    )
    x_items = rng.standard_normal((N, dim))

    idx = rng.integers(0, N, 2048).astype(np.int64)
    rows = rng.standard_normal((2048, dim))
    out = np.zeros((N, dim))

    return {
        "spmm user-item adjacency": lambda k: k.csr_spmm(A.indptr, A.indices, A.data, x_nodes),
        "spmm item-item graph": lambda k: k.csr_spmm(S.indptr, S.indices, S.data, x_items),
        "scatter_add 2048 rows": lambda k: k.scatter_add_rows(out, idx, rows),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--dim", type=int, default=64)
    args = ap.parse_args()
    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels are not built; only the numpy fallback is timed")
    rng = np.random.default_rng(0)
    names = sorted(backends)
    print(f"{'kernel':<28}" + "".join(f"{n + ' (ms)':>14}" for n in names) + f"{'speedup':>10}")
    for label, fn in cases(args.dim, rng).items():
        ms = {}
        for n in names:
            k = backends[n]
            fn(k)  # warm-up
            ms[n] = 1e3 * min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
        speed = f"{ms['python'] / ms['cython']:.1f}x" if "cython" in ms else "-"
        print(f"{label:<28}" + "".join(f"{ms[n]:>14.2f}" for n in names) + f"{speed:>10}")


if __name__ == "__main__":
    main()
