"""Benchmarks: compiled vs pure-Python traversal kernels, and batching gains.

The kernel comparison builds identical indexes with each backend (the
structures must match node for node; the backends differ only in speed)
and times construction plus single-searcher Euclidean queries.  The
batching comparison replays one workload through the aggregation queue
and through per-request dispatch, reporting invocation counts and modeled
engine time under a fixed per-invocation overhead.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from .batching import BatchQueue, Dispatcher, EvalRequest, ModelBatchEngine
from .index import GraphIndex
from .metric import create_model, project
from .search import SearchParams, c_hipanns, euclidean_scorer


def clustered_vectors(n: int, d: int, n_clusters: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=4.0, size=(n_clusters, d))
    assign = rng.integers(0, n_clusters, size=n)
    return centers[assign] + rng.normal(size=(n, d))


def kernel_benchmark(
    n_items: int = 20000,
    d: int = 16,
    m: int = 8,
    ef_construction: int = 32,
    n_queries: int = 50,
    seed: int = 0,
) -> dict:
    """Build + query timings per kernel backend, with a structure parity check."""
    vectors = clustered_vectors(n_items, d, n_clusters=32, seed=seed)
    rng = np.random.default_rng(seed + 1)
    queries = vectors[rng.choice(n_items, size=n_queries, replace=False)] + 0.1

    results: dict = {"n_items": n_items, "dim": d, "backends": {}}
    edge_signature = None
    for name in kernels.available_backends():
        t0 = time.perf_counter()
        index = GraphIndex.build(
            vectors,
            m=m,
            ef_construction=ef_construction,
            seed=seed,
            kernel_backend=name,
        )
        build_s = time.perf_counter() - t0
        sig = (index.layer_node_counts(), [int(c.sum()) for c in index._cnts])
        if edge_signature is None:
            edge_signature = sig
        elif sig != edge_signature:
            raise AssertionError(f"backend {name} built a different graph: {sig}")

        params = SearchParams(k=10, k_parallel=1, hops=3, ef=32)
        t0 = time.perf_counter()
        for q in queries:
            c_hipanns(index, euclidean_scorer(q, vectors), params)
        query_s = time.perf_counter() - t0
        results["backends"][name] = {
            "build_seconds": build_s,
            "inserts_per_second": n_items / build_s,
            "query_seconds_total": query_s,
            "queries_per_second": n_queries / query_s,
        }
    if "compiled" in results["backends"] and "python" in results["backends"]:
        results["build_speedup_compiled_over_python"] = (
            results["backends"]["python"]["build_seconds"]
            / results["backends"]["compiled"]["build_seconds"]
        )
    return results


def batching_benchmark(
    n_requests: int = 1000,
    max_request_size: int = 32,
    capacity: int = 256,
    overhead_s: float = 2e-4,
    per_pair_s: float = 1e-7,
    seed: int = 0,
) -> dict:
    """Aggregated vs per-request dispatch on one irregular workload."""
    rng = np.random.default_rng(seed)
    d_x, d_h, z_dim, n_items = 8, 16, 3, 4096
    model = create_model(d_x=d_x, d_h=d_h, z_dim=z_dim, hidden=(32,), seed=seed)
    item_emb = project(model.item_projector, rng.normal(size=(n_items, d_x)).astype(np.float32))
    users = project(model.user_projector, rng.normal(size=(64, d_x)).astype(np.float32))

    sizes = rng.integers(1, max_request_size + 1, size=n_requests)
    requests = []
    for s in sizes:
        uid = int(rng.integers(0, len(users)))
        ids = rng.integers(0, n_items, size=int(s)).astype(np.int64)
        requests.append((uid, ids))

    # batched path
    engine = ModelBatchEngine(
        model, item_emb, batch_size=capacity, overhead_s=overhead_s, per_pair_s=per_pair_s
    )
    queue = BatchQueue(capacity=capacity, flush_timeout_s=1e-3)
    t0 = time.perf_counter()
    handles = [
        queue.submit(
            EvalRequest(
                users=np.broadcast_to(users[uid], (len(ids), d_h)), item_ids=ids
            )
        )
        for uid, ids in requests
    ]
    dispatcher = Dispatcher(queue, engine).start()
    for h in handles:
        h.wait()
    dispatcher.stop(drain=True)
    wall_batched = time.perf_counter() - t0

    # per-request path
    direct = ModelBatchEngine(
        model, item_emb, batch_size=capacity, overhead_s=overhead_s, per_pair_s=per_pair_s
    )
    t0 = time.perf_counter()
    for uid, ids in requests:
        direct.evaluate(np.broadcast_to(users[uid], (len(ids), d_h)), ids)
    wall_direct = time.perf_counter() - t0

    total_pairs = int(sizes.sum())
    return {
        "n_requests": n_requests,
        "total_pairs": total_pairs,
        "capacity": capacity,
        "modeled_overhead_s": overhead_s,
        "batched": {
            "invocations": engine.invocations,
            "modeled_engine_seconds": engine.simulated_seconds,
            "wall_seconds": wall_batched,
            "timeout_flushes": dispatcher.stats.timeout_flushes,
            "mean_fill": dispatcher.stats.mean_fill,
        },
        "per_request": {
            "invocations": direct.invocations,
            "modeled_engine_seconds": direct.simulated_seconds,
            "wall_seconds": wall_direct,
        },
        "invocation_reduction": n_requests / max(engine.invocations, 1),
        "modeled_speedup": direct.simulated_seconds / max(engine.simulated_seconds, 1e-12),
    }


def run_benchmarks(seed: int = 0, quick: bool = False) -> dict:
    kb = kernel_benchmark(n_items=4000 if quick else 20000, seed=seed)
    bb = batching_benchmark(n_requests=300 if quick else 1000, seed=seed)
    return {"kernels": kb, "batching": bb, "active_backend": kernels.backend_name()}
