"""Learned-metric graph retrieval engine.

Pipeline: synthetic or loaded interaction data -> jointly trained
projectors + MLP relevance metric -> multi-layer navigable graph over
item embeddings -> breadth-parallel graph search with a shared candidate
pool, scoring through an adaptive request-batching executor.
"""

from .batching import (
    BatchClient,
    BatchEngine,
    BatchQueue,
    Dispatcher,
    EvalRequest,
    ModelBatchEngine,
    run_dispatcher,
    stats,
)
from .data import (
    Dataset,
    InteractionRecord,
    ItemRecord,
    UserRecord,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .evalharness import (
    EvalReport,
    RunConfig,
    coverage,
    measure_speed,
    recall_at,
    run_experiment,
)
from .index import GraphIndex, PendingItem, UpdatePolicy, flush_pending
from .metric import (
    MetricModel,
    Projector,
    RelevanceModel,
    cosine_similarity,
    create_model,
    euclidean_distance,
    forward,
    load_model,
    project,
    quantize,
    relevance,
    save_model,
)
from .pool import CandidatePool
from .search import (
    SearchParams,
    SearchResult,
    brute_force,
    c_hipanns,
    euclidean_scorer,
    greedy_search,
    model_scorer,
)
from .training import (
    TrainConfig,
    TrainState,
    fit,
    pearson_correlation,
    prediction_loss,
    scl_loss,
    total_loss,
)

__version__ = "0.1.0"

__all__ = [
    "BatchClient",
    "BatchEngine",
    "BatchQueue",
    "CandidatePool",
    "Dataset",
    "Dispatcher",
    "EvalReport",
    "EvalRequest",
    "GraphIndex",
    "InteractionRecord",
    "ItemRecord",
    "MetricModel",
    "ModelBatchEngine",
    "PendingItem",
    "Projector",
    "RelevanceModel",
    "RunConfig",
    "SearchParams",
    "SearchResult",
    "TrainConfig",
    "TrainState",
    "UpdatePolicy",
    "UserRecord",
    "brute_force",
    "c_hipanns",
    "cosine_similarity",
    "coverage",
    "create_model",
    "euclidean_distance",
    "euclidean_scorer",
    "fit",
    "flush_pending",
    "forward",
    "generate_synthetic",
    "greedy_search",
    "load_dataset",
    "load_model",
    "measure_speed",
    "model_scorer",
    "pearson_correlation",
    "prediction_loss",
    "project",
    "quantize",
    "recall_at",
    "relevance",
    "run_dispatcher",
    "run_experiment",
    "save_dataset",
    "save_model",
    "scl_loss",
    "stats",
    "total_loss",
]
