"""Independent brute-force oracles used to cross-check the fast paths.

Deliberately naive: triple loops, full sorts, central finite differences.
Nothing here imports the implementation under test beyond plain data types.
"""

from __future__ import annotations

import math

import numpy as np


def maxsim_triple_loop(q: np.ndarray, d: np.ndarray) -> float:
    """O(m_q * m_d * dim) reference for MaxSim."""
    total = 0.0
    for i in range(q.shape[0]):
        best = -math.inf
        for j in range(d.shape[0]):
            dot = 0.0
            for k in range(q.shape[1]):
                dot += q[i, k] * d[j, k]
            best = max(best, dot)
        total += best
    return total


def full_sort_search(query: np.ndarray, corpus: list[tuple[str, np.ndarray]],
                     k: int) -> list[tuple[str, float]]:
    """Score every doc with the triple loop, sort fully, take the head."""
    scored = [(doc_id, maxsim_triple_loop(query, d)) for doc_id, d in corpus]
    scored.sort(key=lambda e: (-e[1], e[0]))
    return scored[:k]


def central_fd_grad(f, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function, elementwise in 64-bit."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Relative error between gradient vectors, scale-robust."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


# ---------------------------------------------------------------------------
# Metrics, coded independently of evalkit
# ---------------------------------------------------------------------------


def oracle_metrics(ranked: list[str], rels: dict[str, int], k: int) -> dict[str, float]:
    """ndcg/mrr/recall/map/hit_rate at K for one query, brute force."""
    top = ranked[:k]

    dcg = 0.0
    for pos, doc in enumerate(top, start=1):
        dcg += rels.get(doc, 0) / math.log2(pos + 1)
    ideal_grades = sorted(rels.values(), reverse=True)
    idcg = 0.0
    for pos, g in enumerate(ideal_grades[:k], start=1):
        idcg += g / math.log2(pos + 1)
    ndcg = dcg / idcg if idcg > 0 else 0.0

    mrr = 0.0
    for pos, doc in enumerate(top, start=1):
        if rels.get(doc, 0) > 0:
            mrr = 1.0 / pos
            break

    n_rel = sum(1 for g in rels.values() if g > 0)
    hits = [doc for doc in top if rels.get(doc, 0) > 0]
    recall = len(hits) / n_rel

    ap = 0.0
    seen = 0
    for pos, doc in enumerate(top, start=1):
        if rels.get(doc, 0) > 0:
            seen += 1
            ap += seen / pos
    ap /= min(n_rel, k)

    return {
        "ndcg": ndcg,
        "mrr": mrr,
        "recall": recall,
        "map": ap,
        "hit_rate": 1.0 if hits else 0.0,
    }
