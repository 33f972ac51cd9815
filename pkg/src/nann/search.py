"""Retrieval algorithms over the graph index.

Three searchers share one contract: a ``score_fn`` mapping a batch of item
ids to relevance scores (higher is better), so the same traversal code
runs against direct evaluation, a Euclidean baseline, or the batched
evaluation engine.  ``brute_force`` is the exact oracle; ``greedy_search``
is the classic single-seed layered descent; ``c_hipanns`` runs k parallel
searchers per layer feeding one shared bounded candidate pool, with a
shared claimed-set guaranteeing no item is scored twice within a query.
"""

from __future__ import annotations

import heapq
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from threading import Lock
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .index import GraphIndex
from .pool import CandidatePool

ScoreFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class SearchParams:
    k: int = 10  # result count (pool capacity)
    k_parallel: int = 1  # simultaneous searchers per layer
    hops: int = 3  # hop budget per searcher per layer
    ef: int | None = None  # frontier width; defaults to 2 * k
    deterministic: bool = True
    n_threads: int | None = None  # parallel mode only

    def __post_init__(self):
        if self.k < 1 or self.k_parallel < 1 or self.hops < 1:
            raise InvalidArgumentError("k, k_parallel, and hops must be >= 1")
        if self.k_parallel > self.k:
            raise InvalidArgumentError("k_parallel must not exceed k")
        if self.ef is not None and self.ef < 1:
            raise InvalidArgumentError("ef must be >= 1")

    @property
    def frontier_width(self) -> int:
        return self.ef if self.ef is not None else 2 * self.k


@dataclass
class SearchStats:
    nodes_visited: int = 0
    metric_evaluations: int = 0
    per_layer_evaluations: list[int] = field(default_factory=list)
    wall_time_s: float = 0.0
    hops_to_best: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SearchResult:
    items: list[tuple[int, float]]  # (item_id, score), descending
    stats: SearchStats

    def item_ids(self) -> list[int]:
        return [i for i, _ in self.items]


def euclidean_scorer(query: np.ndarray, item_vectors: np.ndarray) -> ScoreFn:
    """Score = negated Euclidean distance; item ids must be row indexes."""
    query = np.asarray(query, dtype=np.float64)

    def fn(ids: np.ndarray) -> np.ndarray:
        diffs = item_vectors[ids] - query
        return -np.sqrt(np.einsum("ij,ij->i", diffs, diffs))

    return fn


def model_scorer(model, user_embedding: np.ndarray, item_embeddings: np.ndarray) -> ScoreFn:
    """Learned-metric scorer over precomputed item embeddings (dense ids)."""

    def fn(ids: np.ndarray) -> np.ndarray:
        return model.score(user_embedding, item_embeddings[ids]).astype(np.float64)

    return fn


def brute_force(score_fn: ScoreFn, item_ids: Sequence[int], k: int) -> SearchResult:
    """Exact top-k by exhaustive scoring; the ground-truth oracle."""
    item_ids = np.asarray(item_ids, dtype=np.int64)
    if k > len(item_ids):
        raise InvalidArgumentError(f"k={k} exceeds item count {len(item_ids)}")
    t0 = time.perf_counter()
    scores = np.asarray(score_fn(item_ids), dtype=np.float64)
    order = sorted(range(len(item_ids)), key=lambda i: (-scores[i], item_ids[i]))[:k]
    items = [(int(item_ids[i]), float(scores[i])) for i in order]
    stats = SearchStats(
        nodes_visited=len(item_ids),
        metric_evaluations=len(item_ids),
        per_layer_evaluations=[len(item_ids)],
        wall_time_s=time.perf_counter() - t0,
    )
    return SearchResult(items=items, stats=stats)


class _Evaluator:
    """Per-query score cache; counts unique evaluations per layer."""

    def __init__(self, score_fn: ScoreFn, ids_view: np.ndarray, n_layers: int):
        self.score_fn = score_fn
        self.ids_view = ids_view
        self.scores: dict[int, float] = {}
        self.per_layer = [0] * n_layers
        self.eval_hop: dict[int, int] = {}
        self.lock = Lock()

    def evaluate(self, slots: list[int], layer: int, hop: int) -> list[float]:
        """Score uncached slots in one batch; returns scores in input order."""
        fresh = [s for s in slots if s not in self.scores]
        if fresh:
            values = self.score_fn(self.ids_view[fresh])
            with self.lock:
                self.per_layer[layer] += len(fresh)
                for s, v in zip(fresh, values):
                    self.scores[s] = float(v)
                    self.eval_hop[s] = hop
        return [self.scores[s] for s in slots]


def _neighbors_of(layers, layer: int, slot: int) -> list[int]:
    nbrs, cnts = layers[layer]
    return [int(s) for s in nbrs[slot, : cnts[slot]]]


def greedy_search(index: GraphIndex, score_fn: ScoreFn, params: SearchParams) -> SearchResult:
    """Layered best-first descent with an ef-wide frontier per layer."""
    if len(index) == 0:
        raise InvalidArgumentError("index is empty")
    t0 = time.perf_counter()
    ids_view, _, layers, entry_slot = index.graph_view()
    top = index.n_layers - 1
    ef = params.frontier_width
    ev = _Evaluator(score_fn, ids_view, top + 1)

    seeds = [entry_slot]
    ev.evaluate(seeds, top, 0)
    for layer in range(top, -1, -1):
        # max-heap of candidates, bounded min-heap of kept results
        cand = [(-ev.scores[s], int(ids_view[s]), s) for s in seeds]
        heapq.heapify(cand)
        kept: list[tuple[float, int, int]] = []  # (score, -id, slot), worst first
        for s in seeds:
            heapq.heappush(kept, (ev.scores[s], -int(ids_view[s]), s))
            if len(kept) > ef:
                heapq.heappop(kept)
        visited = set(seeds)
        while cand:
            neg_score, cid, slot = heapq.heappop(cand)
            if len(kept) >= ef and (-neg_score, -cid) < (kept[0][0], kept[0][1]):
                break  # best remaining candidate cannot beat the worst kept
            fresh = [nb for nb in _neighbors_of(layers, layer, slot) if nb not in visited]
            visited.update(fresh)
            if not fresh:
                continue
            scores = ev.evaluate(fresh, layer, 0)
            for nb, sc in zip(fresh, scores):
                nb_id = int(ids_view[nb])
                if len(kept) >= ef and (sc, -nb_id) < (kept[0][0], kept[0][1]):
                    continue
                heapq.heappush(cand, (-sc, nb_id, nb))
                heapq.heappush(kept, (sc, -nb_id, nb))
                if len(kept) > ef:
                    heapq.heappop(kept)
        seeds = [slot for _, _, slot in sorted(kept, reverse=True)]

    ranked = sorted(
        ((ids_view[s], ev.scores[s]) for s in seeds),
        key=lambda e: (-e[1], e[0]),
    )[: params.k]
    stats = SearchStats(
        nodes_visited=len(ev.scores),
        metric_evaluations=len(ev.scores),
        per_layer_evaluations=ev.per_layer,
        wall_time_s=time.perf_counter() - t0,
    )
    return SearchResult(items=[(int(i), float(s)) for i, s in ranked], stats=stats)


def c_hipanns(index: GraphIndex, score_fn: ScoreFn, params: SearchParams) -> SearchResult:
    """Breadth-parallel layered search with a shared candidate pool.

    Per layer: the pool's best ``k_parallel`` items seed that many
    searchers; each searcher expands its frontier for ``hops`` hops,
    claiming unvisited nodes in a shared set (claim wins the right to
    evaluate), scoring each hop's claims in one batch, and pushing them
    into the shared pool.  Frontiers are pruned to the ``ef`` best nodes
    the searcher claimed on the last hop.

    In deterministic mode searchers advance in lockstep, one hop at a
    time, in seed order; results are then independent of thread count.
    """
    if len(index) == 0:
        raise InvalidArgumentError("index is empty")
    t0 = time.perf_counter()
    ids_view, _, layers, entry_slot = index.graph_view()
    top = index.n_layers - 1
    ef = params.frontier_width
    ev = _Evaluator(score_fn, ids_view, top + 1)
    pool = CandidatePool(params.k)
    claimed: set[int] = set()
    claim_lock = Lock()
    slot_of = index._slot_of
    hop_counter = 0

    def claim(slots: list[int]) -> list[int]:
        with claim_lock:
            fresh = [s for s in slots if s not in claimed]
            claimed.update(fresh)
        return fresh

    def score_and_pool(slots: list[int], layer: int, hop: int) -> list[tuple[int, float]]:
        scores = ev.evaluate(slots, layer, hop)
        out = []
        for s, sc in zip(slots, scores):
            pool.push(int(ids_view[s]), sc)
            out.append((s, sc))
        return out

    # top-layer seeding: entry point plus its top-layer neighborhood
    init = claim([entry_slot] + _neighbors_of(layers, top, entry_slot))
    score_and_pool(init, top, 0)

    for layer in range(top, -1, -1):
        seeds = [slot_of[i] for i, _ in pool.top(params.k_parallel)]
        frontiers = {i: [s] for i, s in enumerate(seeds)}

        def hop_once(i: int, layer: int, hop: int) -> None:
            frontier = frontiers[i]
            if not frontier:
                return
            nbrs: list[int] = []
            seen_local = set()
            for s in frontier:
                for nb in _neighbors_of(layers, layer, s):
                    if nb not in seen_local:
                        seen_local.add(nb)
                        nbrs.append(nb)
            fresh = claim(nbrs)
            if not fresh:
                frontiers[i] = []
                return
            scored = score_and_pool(fresh, layer, hop)
            scored.sort(key=lambda e: (-e[1], ids_view[e[0]]))
            frontiers[i] = [s for s, _ in scored[:ef]]

        if params.deterministic:
            for t in range(params.hops):
                hop_counter += 1
                for i in range(len(seeds)):
                    hop_once(i, layer, hop_counter)
        else:
            hop_counter += params.hops

            def run_searcher(i: int) -> None:
                for t in range(params.hops):
                    hop_once(i, layer, hop_counter)

            workers = params.n_threads or params.k_parallel
            with ThreadPoolExecutor(max_workers=workers) as ex:
                list(ex.map(run_searcher, range(len(seeds))))

    items = pool.top(params.k)
    best_hop = ev.eval_hop.get(slot_of[items[0][0]]) if items else None
    stats = SearchStats(
        nodes_visited=len(claimed),
        metric_evaluations=len(ev.scores),
        per_layer_evaluations=ev.per_layer,
        wall_time_s=time.perf_counter() - t0,
        hops_to_best=best_hop,
    )
    return SearchResult(items=items, stats=stats)
