"""MaxSim scoring kernels.

The hot loop (scoring one query against a packed corpus of token
embeddings) has two implementations: a Cython extension built at install
time, and a pure-numpy fallback. The fastest available backend is picked
at import; `backend_name()` reports which one is active and
`maxsim_scores_numpy` is always importable for benchmarking and
cross-checking.
"""

from __future__ import annotations

import numpy as np

from ._numpy import maxsim_scores_numpy

try:
    from ._maxsim import maxsim_scores_cython

    _BACKEND = "cython"
except ImportError:  # extension not built; numpy path is exact enough
    maxsim_scores_cython = None
    _BACKEND = "numpy"

__all__ = ["maxsim_scores", "maxsim_scores_numpy", "maxsim_scores_cython", "backend_name", "pack_embeddings"]


def backend_name() -> str:
    return _BACKEND


def pack_embeddings(matrices) -> tuple[np.ndarray, np.ndarray]:
    """Pack a list of (m_i x d) float arrays into (tokens, offsets) for scoring.

    Returns a (total x d) float32 array and an int64 offsets array of
    length n+1 with offsets[i]..offsets[i+1] delimiting document i.
    """
    offsets = np.zeros(len(matrices) + 1, dtype=np.int64)
    for i, m in enumerate(matrices):
        offsets[i + 1] = offsets[i] + m.shape[0]
    if not matrices:
        return np.zeros((0, 1), dtype=np.float32), offsets
    tokens = np.ascontiguousarray(np.concatenate(matrices, axis=0), dtype=np.float32)
    return tokens, offsets


def maxsim_scores(query: np.ndarray, doc_tokens: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Late-interaction score of one query against every packed document.

    query: (m_q x d) float array; doc_tokens/offsets: see pack_embeddings.
    Returns a float64 array of per-document scores.
    """
    query = np.ascontiguousarray(query, dtype=np.float32)
    doc_tokens = np.ascontiguousarray(doc_tokens, dtype=np.float32)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if offsets.shape[0] < 1:
        raise ValueError("offsets must have length n+1 >= 1")
    if doc_tokens.shape[0] > 0 and query.shape[1] != doc_tokens.shape[1]:
        raise ValueError(f"dim mismatch: query d={query.shape[1]}, docs d={doc_tokens.shape[1]}")
    if _BACKEND == "cython":
        return maxsim_scores_cython(query, doc_tokens, offsets)
    return maxsim_scores_numpy(query, doc_tokens, offsets)
