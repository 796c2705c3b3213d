"""Hot inner-loop kernels with numba-jitted and pure-numpy backends.

The jitted path is the default; set ``BACL_NO_NUMBA=1`` to select the numpy
fallback. Both backends are written to produce bit-identical outputs (they
only compare and select from precomputed similarity arrays, no re-association
of float sums), which the test suite asserts and ``benchmarks/bench_kernels.py``
times.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("BACL_NO_NUMBA", "0") != "1"

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

# ---------------------------------------------------------------------------
# numpy reference implementations


def margin_filter_topk_numpy(sims, pos_sims, banned_ids, pool_ids, eps, k_max):
    """Per-anchor margin filter and truncation.

    Keeps pool columns whose similarity lies within ``eps`` of the anchor's
    positive similarity and whose id differs from the anchor's pairing id,
    then truncates to the ``k_max`` highest-similarity columns (ties broken
    by ascending pool id). Returns ``(cols, counts)`` where ``cols`` is
    (B, k_max) int64 padded with -1.
    """
    n_anchor = sims.shape[0]
    cols = np.full((n_anchor, k_max), -1, dtype=np.int64)
    counts = np.zeros(n_anchor, dtype=np.int64)
    for i in range(n_anchor):
        ok = (np.abs(sims[i] - pos_sims[i]) <= eps) & (pool_ids != banned_ids[i])
        hit = np.nonzero(ok)[0]
        if hit.size == 0:
            continue
        order = np.lexsort((pool_ids[hit], -sims[i, hit]))
        take = hit[order[: min(k_max, hit.size)]]
        cols[i, : take.size] = take
        counts[i] = take.size
    return cols, counts


def rank_of_true_numpy(scores, true_cols):
    """1-based competition rank of the true column in each score row."""
    rows = np.arange(scores.shape[0])
    true_vals = scores[rows, true_cols]
    return 1 + (scores > true_vals[:, None]).sum(axis=1).astype(np.int64)


def ambiguous_anchor_flags_numpy(sims, pos_sims, anchor_ids, pool_ids, eps):
    """Flag anchors having >= 1 non-matching pool sample within ``eps`` of
    their positive similarity."""
    near = np.abs(sims - pos_sims[:, None]) <= eps
    nonmatch = pool_ids[None, :] != anchor_ids[:, None]
    return (near & nonmatch).any(axis=1)


# ---------------------------------------------------------------------------
# numba twins

if USE_NUMBA:

    @njit(cache=True)
    def _margin_filter_topk_nb(sims, pos_sims, banned_ids, pool_ids, eps, k_max):
        n_anchor, n_pool = sims.shape
        cols = np.full((n_anchor, k_max), -1, dtype=np.int64)
        counts = np.zeros(n_anchor, dtype=np.int64)
        best_s = np.empty(k_max, dtype=np.float64)
        best_j = np.empty(k_max, dtype=np.int64)
        for i in range(n_anchor):
            m = 0
            for j in range(n_pool):
                if pool_ids[j] == banned_ids[i]:
                    continue
                s = sims[i, j]
                d = s - pos_sims[i]
                if d < 0.0:
                    d = -d
                if d > eps:
                    continue
                # insertion point under (similarity desc, pool id asc)
                p = m if m < k_max else k_max
                while p > 0:
                    q = p - 1
                    if best_s[q] < s or (
                        best_s[q] == s and pool_ids[best_j[q]] > pool_ids[j]
                    ):
                        p = q
                    else:
                        break
                if m < k_max:
                    for t in range(m, p, -1):
                        best_s[t] = best_s[t - 1]
                        best_j[t] = best_j[t - 1]
                    best_s[p] = s
                    best_j[p] = j
                    m += 1
                elif p < k_max:
                    for t in range(k_max - 1, p, -1):
                        best_s[t] = best_s[t - 1]
                        best_j[t] = best_j[t - 1]
                    best_s[p] = s
                    best_j[p] = j
            for t in range(m):
                cols[i, t] = best_j[t]
            counts[i] = m
        return cols, counts

    @njit(cache=True)
    def _rank_of_true_nb(scores, true_cols):
        n, m = scores.shape
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            tv = scores[i, true_cols[i]]
            r = 1
            for j in range(m):
                if scores[i, j] > tv:
                    r += 1
            out[i] = r
        return out

    @njit(cache=True)
    def _ambiguous_anchor_flags_nb(sims, pos_sims, anchor_ids, pool_ids, eps):
        n_anchor, n_pool = sims.shape
        out = np.zeros(n_anchor, dtype=np.bool_)
        for i in range(n_anchor):
            for j in range(n_pool):
                if pool_ids[j] == anchor_ids[i]:
                    continue
                d = sims[i, j] - pos_sims[i]
                if d < 0.0:
                    d = -d
                if d <= eps:
                    out[i] = True
                    break
        return out

    def margin_filter_topk_numba(sims, pos_sims, banned_ids, pool_ids, eps, k_max):
        return _margin_filter_topk_nb(
            np.ascontiguousarray(sims, dtype=np.float64),
            np.ascontiguousarray(pos_sims, dtype=np.float64),
            np.ascontiguousarray(banned_ids, dtype=np.int64),
            np.ascontiguousarray(pool_ids, dtype=np.int64),
            float(eps),
            int(k_max),
        )

    def rank_of_true_numba(scores, true_cols):
        return _rank_of_true_nb(
            np.ascontiguousarray(scores, dtype=np.float64),
            np.ascontiguousarray(true_cols, dtype=np.int64),
        )

    def ambiguous_anchor_flags_numba(sims, pos_sims, anchor_ids, pool_ids, eps):
        return _ambiguous_anchor_flags_nb(
            np.ascontiguousarray(sims, dtype=np.float64),
            np.ascontiguousarray(pos_sims, dtype=np.float64),
            np.ascontiguousarray(anchor_ids, dtype=np.int64),
            np.ascontiguousarray(pool_ids, dtype=np.int64),
            float(eps),
        )

    margin_filter_topk = margin_filter_topk_numba
    rank_of_true = rank_of_true_numba
    ambiguous_anchor_flags = ambiguous_anchor_flags_numba
else:
    margin_filter_topk = margin_filter_topk_numpy
    rank_of_true = rank_of_true_numpy
    ambiguous_anchor_flags = ambiguous_anchor_flags_numpy


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
