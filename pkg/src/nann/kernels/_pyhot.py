"""Pure-Python graph traversal kernel (numpy-vectorized fallback).

Semantics match the compiled kernel: squared Euclidean distances,
candidates ordered by (distance, id), results are the ``ef``
lexicographically smallest (distance, id) pairs reachable from the entry
set, and ``stamps`` marks every node whose distance was computed.
Distance values may differ from the compiled kernel in the final ulp
(vectorized vs sequential summation order); traversal decisions agree
whenever no two distances collide within rounding error.
"""

from __future__ import annotations

import heapq

import numpy as np


def backend_name() -> str:
    return "python"


def search_layer(
    vectors: np.ndarray,
    neighbors: np.ndarray,
    counts: np.ndarray,
    query: np.ndarray,
    entries: np.ndarray,
    ef: int,
    stamps: np.ndarray,
    stamp: int,
    cand_d: np.ndarray,
    cand_i: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Best-first beam search on one layer; returns (ids, dist2) ascending.

    ``cand_d`` / ``cand_i`` are scratch buffers used by the compiled
    backend; they are accepted (and ignored) here so call sites are
    backend-agnostic.
    """
    del cand_d, cand_i

    candidates: list[tuple[float, int]] = []  # min-heap by (dist2, id)
    result: list[tuple[float, int]] = []  # max-heap via negated keys

    fresh = [e for e in entries.tolist() if stamps[e] != stamp]
    if fresh:
        stamps[fresh] = stamp
        diffs = vectors[fresh] - query
        dists = np.einsum("ij,ij->i", diffs, diffs)
        for node, d in zip(fresh, dists.tolist()):
            heapq.heappush(candidates, (d, node))
            heapq.heappush(result, (-d, -node))
            if len(result) > ef:
                heapq.heappop(result)

    while candidates:
        d, node = heapq.heappop(candidates)
        if len(result) >= ef:
            worst_d, worst_i = -result[0][0], -result[0][1]
            if d > worst_d or (d == worst_d and node > worst_i):
                break
        nbrs = neighbors[node, : counts[node]]
        unseen = nbrs[stamps[nbrs] != stamp].tolist()
        if not unseen:
            continue
        stamps[unseen] = stamp
        diffs = vectors[unseen] - query
        dists = np.einsum("ij,ij->i", diffs, diffs)
        for nb, dn in zip(unseen, dists.tolist()):
            if len(result) >= ef:
                worst_d, worst_i = -result[0][0], -result[0][1]
                if dn > worst_d or (dn == worst_d and nb > worst_i):
                    continue
            heapq.heappush(candidates, (dn, nb))
            heapq.heappush(result, (-dn, -nb))
            if len(result) > ef:
                heapq.heappop(result)

    out = sorted((-d, -i) for d, i in result)
    ids = np.array([i for _, i in out], dtype=np.int64)
    dists = np.array([d for d, _ in out], dtype=np.float64)
    return ids, dists
