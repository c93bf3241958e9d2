"""Benchmark the Cython and numpy MaxSim kernels on a packed corpus.

    python3 benchmarks/bench_maxsim.py [--docs 20000] [--repeats 5]
"""

import argparse
import time

import numpy as np

from liforge.core import make_rng
from liforge.kernels import (
    backend_name,
    maxsim_scores_cython,
    maxsim_scores_numpy,
    pack_embeddings,
)


def make_workload(rng, n_docs, dim, query_len, doc_len_range):
    def unit(n):
        rows = rng.standard_normal((n, dim))
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)

    query = unit(query_len).astype(np.float32)
    lengths = rng.integers(doc_len_range[0], doc_len_range[1] + 1, n_docs)
    tokens, offsets = pack_embeddings([unit(int(n)) for n in lengths])
    return query, tokens, offsets


def time_fn(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", type=int, default=20000)
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--query-len", type=int, default=32)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = make_rng(0)
    query, tokens, offsets = make_workload(rng, args.docs, args.dim,
                                           args.query_len, (20, 60))
    total_tokens = tokens.shape[0]
    print(f"active backend: {backend_name()}")
    print(f"workload: {args.docs} docs, {total_tokens} tokens, "
          f"dim {args.dim}, query {args.query_len} rows")

    t_numpy = time_fn(maxsim_scores_numpy, (query, tokens, offsets), args.repeats)
    print(f"numpy : {t_numpy * 1e3:8.2f} ms  "
          f"({total_tokens / t_numpy / 1e6:.1f} Mtok/s)")

    if maxsim_scores_cython is None:
        print("cython: extension not built, skipped")
        return
    t_cython = time_fn(maxsim_scores_cython, (query, tokens, offsets), args.repeats)
    print(f"cython: {t_cython * 1e3:8.2f} ms  "
          f"({total_tokens / t_cython / 1e6:.1f} Mtok/s)")

    a = maxsim_scores_numpy(query, tokens, offsets)
    b = maxsim_scores_cython(query, tokens, offsets)
    print(f"max |numpy - cython| = {np.abs(a - b).max():.2e}")
    print(f"speedup (numpy/cython): {t_numpy / t_cython:.2f}x")


if __name__ == "__main__":
    main()
