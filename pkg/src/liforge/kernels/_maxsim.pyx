# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Cython MaxSim kernel: one query against a packed corpus."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def maxsim_scores_cython(cnp.float32_t[:, ::1] query,
                         cnp.float32_t[:, ::1] doc_tokens,
                         cnp.int64_t[::1] offsets):
    cdef Py_ssize_t n_docs = offsets.shape[0] - 1
    cdef Py_ssize_t m_q = query.shape[0]
    cdef Py_ssize_t dim = query.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n_docs, dtype=np.float64)
    cdef cnp.float64_t[::1] out_v = out
    cdef Py_ssize_t doc, qi, dj, k, lo, hi
    cdef float dot
    cdef double best, total

    for doc in range(n_docs):
        lo = offsets[doc]
        hi = offsets[doc + 1]
        total = 0.0
        for qi in range(m_q):
            best = -1e300
            for dj in range(lo, hi):
                # float32 accumulation matches the numpy backend's matmul dtype
                dot = 0.0
                for k in range(dim):
                    dot += query[qi, k] * doc_tokens[dj, k]
                if dot > best:
                    best = dot
            total += best
        out_v[doc] = total
    return out
