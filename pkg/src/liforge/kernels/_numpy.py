"""Pure-numpy MaxSim scoring fallback."""

from __future__ import annotations

import numpy as np


def maxsim_scores_numpy(query: np.ndarray, doc_tokens: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Score one query against packed documents via one big matmul.

    Per-document max over token similarities is taken with
    maximum.reduceat over the packed axis, then summed over query rows.
    """
    n_docs = offsets.shape[0] - 1
    if n_docs == 0:
        return np.zeros(0, dtype=np.float64)
    sims = query.astype(np.float64) @ doc_tokens.astype(np.float64).T
    # reduceat needs strictly valid start indices; empty docs are not produced
    # by pack_embeddings (EmbeddingMatrix enforces m >= 1).
    per_doc_max = np.maximum.reduceat(sims, offsets[:-1], axis=1)
    return per_doc_max.sum(axis=0)
