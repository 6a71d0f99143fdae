"""Hot numeric kernels: numba-compiled loops with a pure-numpy fallback.

The numba path is used by default when numba imports cleanly; set the
environment variable ``MBCR_NO_NUMBA=1`` to force the numpy fallback.
Both paths accumulate in the same element order, so their float64 results
are bitwise identical (see tests and benchmarks/kernel_bench.py).
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("MBCR_NO_NUMBA", "") not in ("1", "true", "yes")
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

__all__ = ["USE_NUMBA", "csr_matmul", "rank_heldout"]


# ---------------------------------------------------------------- CSR matmul

def _csr_matmul_np(indptr, indices, data, x):
    out = np.zeros((indptr.shape[0] - 1, x.shape[1]))
    rows = np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))
    np.add.at(out, rows, data[:, None] * x[indices])
    return out


if USE_NUMBA:

    @njit(cache=True)
    def _csr_matmul_nb(indptr, indices, data, x):
        n = indptr.shape[0] - 1
        d = x.shape[1]
        out = np.zeros((n, d))
        for i in range(n):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                w = data[p]
                for c in range(d):
                    out[i, c] += w * x[j, c]
        return out


def csr_matmul(indptr, indices, data, x):
    """Sparse @ dense product for a CSR matrix over float64 arrays."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USE_NUMBA:
        return _csr_matmul_nb(indptr, indices, data, x)
    return _csr_matmul_np(indptr, indices, data, x)


# ------------------------------------------------------------- ranking kernel

def _rank_heldout_np(scores, heldout, excl_indptr, excl_indices):
    n_users, n_items = scores.shape
    ranks = np.empty(n_users, dtype=np.int64)
    candidates = np.empty(n_users, dtype=np.int64)
    for t in range(n_users):
        row = scores[t]
        excl = excl_indices[excl_indptr[t]:excl_indptr[t + 1]]
        mask = np.ones(n_items, dtype=bool)
        mask[excl] = False
        h = heldout[t]
        s_h = row[h]
        higher = int(np.count_nonzero(mask & (row > s_h)))
        tied_before = int(np.count_nonzero(mask[:h] & (row[:h] == s_h)))
        ranks[t] = 1 + higher + tied_before
        candidates[t] = int(np.count_nonzero(mask))
    return ranks, candidates


if USE_NUMBA:

    @njit(cache=True)
    def _rank_heldout_nb(scores, heldout, excl_indptr, excl_indices):
        n_users, n_items = scores.shape
        ranks = np.empty(n_users, dtype=np.int64)
        candidates = np.empty(n_users, dtype=np.int64)
        for t in range(n_users):
            mask = np.ones(n_items, dtype=np.bool_)
            for p in range(excl_indptr[t], excl_indptr[t + 1]):
                mask[excl_indices[p]] = False
            h = heldout[t]
            s_h = scores[t, h]
            higher = 0
            tied_before = 0
            n_cand = 0
            for j in range(n_items):
                if not mask[j]:
                    continue
                n_cand += 1
                s = scores[t, j]
                if s > s_h:
                    higher += 1
                elif s == s_h and j < h:
                    tied_before += 1
            ranks[t] = 1 + higher + tied_before
            candidates[t] = n_cand
        return ranks, candidates


def rank_heldout(scores, heldout, excl_indptr, excl_indices):
    """Rank of each held-out item among non-excluded candidates.

    rank = 1 + #(candidates scoring strictly higher)
             + #(equal-scoring candidates with smaller item id).
    Returns (ranks, candidate counts), both int64.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    heldout = np.ascontiguousarray(heldout, dtype=np.int64)
    if USE_NUMBA:
        return _rank_heldout_nb(scores, heldout, excl_indptr, excl_indices)
    return _rank_heldout_np(scores, heldout, excl_indptr, excl_indices)
