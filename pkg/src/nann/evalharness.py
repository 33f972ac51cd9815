"""End-to-end offline evaluation: generate, train, build, search, measure.

Ground truth per query is the learned metric's own brute force, so the
quality numbers measure search fidelity rather than model quality.
Ablation flags swap in degraded configurations: no rank-alignment term,
single behavior type, single-searcher greedy traversal, or unbatched
evaluation.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import kernels
from .batching import BatchClient, BatchQueue, Dispatcher, ModelBatchEngine
from .data import Dataset, generate_synthetic
from .errors import InvalidArgumentError
from .index import GraphIndex
from .metric import RelevanceModel
from .search import (
    SearchParams,
    brute_force,
    c_hipanns,
    greedy_search,
    model_scorer,
)
from .training import TrainConfig, fit


def coverage(retrieved_ids, ground_truth_ids) -> float:
    """Fraction of the brute-force top pool found by the search."""
    gt = set(ground_truth_ids)
    if not gt:
        raise InvalidArgumentError("empty ground truth")
    return len(set(retrieved_ids) & gt) / len(gt)


def recall_at(k: int, retrieved_ids, ground_truth_ids) -> float:
    """Overlap fraction between the top-k of each list."""
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    return len(set(list(retrieved_ids)[:k]) & set(list(ground_truth_ids)[:k])) / k


def measure_speed(metric_evaluations: int, wall_seconds: float) -> float:
    """Items scored per second."""
    if wall_seconds <= 0:
        raise InvalidArgumentError("wall_seconds must be positive")
    return metric_evaluations / wall_seconds


@dataclass
class RunConfig:
    """Full pipeline configuration (flat, file-loadable)."""

    seed: int = 0
    # dataset
    n_users: int = 200
    n_items: int = 5000
    d_x: int = 16
    z_dim: int = 3
    density: float = 0.002
    # training
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 0.01
    lambda_scl: float = 1.0
    n_scl_pairs: int = 32
    negative_ratio: float = 1.0
    d_h: int = 32
    hidden: tuple[int, ...] = (64, 64)
    # index
    m: int = 16
    ef_construction: int = 64
    level_prob: float = 1.0 / 17.0
    max_layers: int = 4
    # search
    k: int = 100
    k_parallel: int = 8
    hops: int = 3
    ef: int | None = None
    n_queries: int = 50
    deterministic: bool = True
    query_workers: int = 8
    # batching
    batch_capacity: int = 256
    flush_timeout_s: float = 1e-3
    # ablations
    no_scl: bool = False
    no_multirel: bool = False
    no_parallel: bool = False
    no_batching: bool = False

    def run_id(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha1(canon.encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_file(cls, path: str, **overrides) -> "RunConfig":
        """Flat key=value text; '#' starts a comment."""
        values: dict = {}
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise InvalidArgumentError(f"{path}:{lineno}: expected key=value")
                key, val = (part.strip() for part in line.split("=", 1))
                values[key] = val
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        kwargs = {}
        by_name = {f.name: f for f in fields(cls)}
        for key, val in values.items():
            if key not in by_name:
                raise InvalidArgumentError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(val, by_name[key].name, cls)
        return cls(**kwargs)


def _coerce(val, name: str, cls):
    default = getattr(cls(), name)
    if not isinstance(val, str):
        return val
    if name == "hidden":
        return tuple(int(x) for x in val.split(",") if x.strip())
    if name == "ef":
        return None if val.lower() in ("none", "") else int(val)
    if isinstance(default, bool):
        return val.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(val)
    if isinstance(default, float):
        return float(val)
    return val


@dataclass
class QueryMetrics:
    user_id: int
    cov: float
    rec10: float
    rec100: float
    metric_evaluations: int
    nodes_visited: int
    wall_time_s: float
    hops_to_best: int | None = None


@dataclass
class EvalReport:
    run_id: str
    config: dict
    backend: str
    per_query: list[QueryMetrics] = field(default_factory=list)
    cov: float = 0.0
    rec10: float = 0.0
    rec100: float = 0.0
    items_per_second: float = 0.0
    stage_seconds: dict = field(default_factory=dict)
    batching: dict = field(default_factory=dict)
    error: str | None = None

    def to_json(self, indent: int | None = 2) -> str:
        payload = asdict(self)
        return json.dumps(payload, indent=indent)

    def per_query_tsv(self) -> str:
        cols = [f.name for f in fields(QueryMetrics)]
        lines = ["\t".join(cols)]
        for q in self.per_query:
            row = asdict(q)
            lines.append("\t".join(str(row[c]) for c in cols))
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        rows = [
            ("run id", self.run_id),
            ("backend", self.backend),
            ("queries", str(len(self.per_query))),
            ("Cov", f"{self.cov:.4f}"),
            ("Rec@10", f"{self.rec10:.4f}"),
            ("Rec@100", f"{self.rec100:.4f}"),
            ("items/sec", f"{self.items_per_second:,.0f}"),
        ]
        if self.error:
            rows.append(("error", self.error))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def collapse_behaviors(dataset: Dataset) -> Dataset:
    """Keep only behavior type 0 and relabel the dataset as single-relation."""
    kept = [r for r in dataset.interactions if r.behavior == 0]
    return Dataset(
        users=dataset.users, items=dataset.items, interactions=kept, z_dim=1
    )


def train_model(dataset: Dataset, config: RunConfig):
    """Training stage shared by the harness and the CLI."""
    tc = TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        n_scl_pairs=config.n_scl_pairs,
        lambda_scl=0.0 if config.no_scl else config.lambda_scl,
        negative_ratio=config.negative_ratio,
        rng_seed=config.seed,
        d_h=config.d_h,
        hidden=config.hidden,
    )
    return fit(dataset, tc)


def run_experiment(config: RunConfig) -> EvalReport:
    """Execute the full pipeline; stage failures land in ``report.error``."""
    report = EvalReport(
        run_id=config.run_id(),
        config=config.to_dict(),
        backend=kernels.backend_name(),
    )
    stage = "gen"
    try:
        t0 = time.perf_counter()
        dataset = generate_synthetic(
            seed=config.seed,
            n_users=config.n_users,
            n_items=config.n_items,
            d_x=config.d_x,
            z_dim=config.z_dim,
            density=config.density,
        )
        if config.no_multirel:
            dataset = collapse_behaviors(dataset)
        report.stage_seconds[stage] = time.perf_counter() - t0

        stage = "train"
        t0 = time.perf_counter()
        state = train_model(dataset, config)
        model = state.to_model()
        report.stage_seconds[stage] = time.perf_counter() - t0

        stage = "build"
        t0 = time.perf_counter()
        item_emb = model.item_embeddings(dataset.item_features())
        index = GraphIndex.build(
            np.asarray(item_emb, dtype=np.float64),
            m=config.m,
            ef_construction=config.ef_construction,
            level_prob=config.level_prob,
            max_layers=config.max_layers,
            seed=config.seed,
        )
        report.stage_seconds[stage] = time.perf_counter() - t0

        stage = "search"
        t0 = time.perf_counter()
        per_query, batch_report = _run_queries(config, dataset, model, item_emb, index)
        report.per_query = per_query
        report.batching = batch_report
        report.stage_seconds[stage] = time.perf_counter() - t0

        stage = "report"
        report.cov = float(np.mean([q.cov for q in per_query]))
        report.rec10 = float(np.mean([q.rec10 for q in per_query]))
        report.rec100 = float(np.mean([q.rec100 for q in per_query]))
        total_evals = sum(q.metric_evaluations for q in per_query)
        total_wall = sum(q.wall_time_s for q in per_query)
        report.items_per_second = measure_speed(total_evals, max(total_wall, 1e-12))
    except Exception as exc:
        report.error = f"[{stage}] {exc}"
    return report


def _run_queries(
    config: RunConfig,
    dataset: Dataset,
    model: RelevanceModel,
    item_emb: np.ndarray,
    index: GraphIndex,
):
    rng = np.random.default_rng((config.seed, 104729))
    n_q = min(config.n_queries, dataset.n_users)
    query_users = rng.choice(dataset.n_users, size=n_q, replace=False)
    item_ids = np.arange(dataset.n_items, dtype=np.int64)
    gt_k = min(100, dataset.n_items)

    queue = dispatcher = None
    if not config.no_batching:
        queue = BatchQueue(
            capacity=config.batch_capacity, flush_timeout_s=config.flush_timeout_s
        )
        engine = ModelBatchEngine(
            model, item_emb, batch_size=config.batch_capacity
        )
        dispatcher = Dispatcher(queue, engine).start()

    params = SearchParams(
        k=min(config.k, dataset.n_items),
        k_parallel=1 if config.no_parallel else config.k_parallel,
        hops=config.hops,
        ef=config.ef,
        deterministic=config.deterministic,
    )

    def one_query(uid: int) -> QueryMetrics:
        x_u = dataset.users[uid].features
        h_u = model.user_embedding(x_u)
        direct = model_scorer(model, h_u, item_emb)
        gt = brute_force(direct, item_ids, gt_k)
        scorer = direct if config.no_batching else BatchClient(queue, h_u)
        if config.no_parallel:
            result = greedy_search(index, scorer, params)
        else:
            result = c_hipanns(index, scorer, params)
        retrieved = result.item_ids()
        gt_ids = gt.item_ids()
        return QueryMetrics(
            user_id=int(uid),
            cov=coverage(retrieved[:gt_k], gt_ids),
            rec10=recall_at(10, retrieved, gt_ids),
            rec100=recall_at(min(100, gt_k), retrieved, gt_ids),
            metric_evaluations=result.stats.metric_evaluations,
            nodes_visited=result.stats.nodes_visited,
            wall_time_s=result.stats.wall_time_s,
            hops_to_best=result.stats.hops_to_best,
        )

    try:
        workers = max(1, min(config.query_workers, n_q))
        if workers == 1:
            per_query = [one_query(int(u)) for u in query_users]
        else:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                per_query = list(ex.map(one_query, [int(u) for u in query_users]))
    finally:
        batch_report = {}
        if dispatcher is not None:
            dispatcher.stop(drain=True)
            batch_report = dispatcher.stats.to_dict()
    per_query.sort(key=lambda q: q.user_id)
    return per_query, batch_report
