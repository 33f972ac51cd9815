"""Command-line interface: gen, train, build, search, eval, bench.

Every subcommand accepts ``--seed``, ``--config <path>`` (flat key=value
file), and ``--out <dir>``.  Failures print a stage-tagged message to
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from .data import generate_synthetic, load_dataset, save_dataset
from .evalharness import RunConfig, run_experiment, train_model
from .index import GraphIndex
from .metric import load_model, save_model
from .search import SearchParams, c_hipanns, model_scorer


def _load_config(args, **overrides) -> RunConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if args.config:
        return RunConfig.from_file(args.config, **overrides)
    return RunConfig.from_dict(overrides)


def _outdir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    cfg = _load_config(
        args,
        n_users=args.users,
        n_items=args.items,
        d_x=args.dx,
        z_dim=args.zdim,
        density=args.density,
    )
    dataset = generate_synthetic(
        seed=cfg.seed,
        n_users=cfg.n_users,
        n_items=cfg.n_items,
        d_x=cfg.d_x,
        z_dim=cfg.z_dim,
        density=cfg.density,
    )
    path = os.path.join(_outdir(args), "dataset.tsv")
    save_dataset(dataset, path)
    print(
        f"wrote {path}: {dataset.n_users} users, {dataset.n_items} items, "
        f"{len(dataset.interactions)} interactions"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(
        args,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        lambda_scl=args.lambda_scl,
    )
    dataset = load_dataset(args.data)
    state = train_model(dataset, cfg)
    out = _outdir(args)
    model_path = os.path.join(out, "model.bin")
    save_model(state.to_model(), model_path)
    log_path = os.path.join(out, "loss_history.tsv")
    with open(log_path, "w") as f:
        f.write("step\tpred_loss\tscl_loss\ttotal\n")
        for step, pred, scl, total in state.loss_history:
            f.write(f"{step}\t{pred}\t{scl}\t{total}\n")
    final = state.loss_history[-1]
    print(f"wrote {model_path} and {log_path}; final total loss {final[3]:.6f}")
    return 0


def cmd_build(args) -> int:
    cfg = _load_config(args, m=args.m, ef_construction=args.efc)
    dataset = load_dataset(args.data)
    model = load_model(args.model)
    item_emb = model.item_embeddings(dataset.item_features())
    index = GraphIndex.build(
        np.asarray(item_emb, dtype=np.float64),
        m=cfg.m,
        ef_construction=cfg.ef_construction,
        level_prob=cfg.level_prob,
        max_layers=cfg.max_layers,
        seed=cfg.seed,
    )
    path = os.path.join(_outdir(args), "index.bin")
    index.save(path)
    print(f"wrote {path}: {len(index)} items, layer counts {index.layer_node_counts()}")
    return 0


def cmd_search(args) -> int:
    cfg = _load_config(args, k=args.k, k_parallel=args.k_parallel, hops=args.hops)
    dataset = load_dataset(args.data)
    model = load_model(args.model)
    index = GraphIndex.load(args.index)
    if args.user not in {u.user_id for u in dataset.users}:
        raise ValueError(f"user {args.user} not in dataset")
    x_u = next(u.features for u in dataset.users if u.user_id == args.user)
    item_emb = model.item_embeddings(dataset.item_features())
    h_u = model.user_embedding(x_u)
    params = SearchParams(
        k=cfg.k, k_parallel=cfg.k_parallel, hops=cfg.hops, ef=cfg.ef
    )
    result = c_hipanns(index, model_scorer(model, h_u, item_emb), params)
    record = {
        "user_id": args.user,
        "items": [{"item_id": i, "score": s} for i, s in result.items],
        "stats": result.stats.to_dict(),
    }
    print(json.dumps(record, indent=2))
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(
        args,
        no_scl=args.no_scl or None,
        no_multirel=args.no_multirel or None,
        no_parallel=args.no_parallel or None,
        no_batching=args.no_batching or None,
    )
    report = run_experiment(cfg)
    out = _outdir(args)
    with open(os.path.join(out, "report.json"), "w") as f:
        f.write(report.to_json())
    with open(os.path.join(out, "per_query.tsv"), "w") as f:
        f.write(report.per_query_tsv())
    print(report.table())
    if report.error:
        print(report.error, file=sys.stderr)
        return 1
    return 0


def cmd_bench(args) -> int:
    results = bench_mod.run_benchmarks(
        seed=args.seed if args.seed is not None else 0, quick=args.quick
    )
    out = _outdir(args)
    path = os.path.join(out, "bench.json")
    with open(path, "w") as f:
        json.dump(results, f, indent=2)
    kb = results["kernels"]["backends"]
    for name, row in kb.items():
        print(
            f"kernel {name:<9} build {row['build_seconds']:.2f}s "
            f"({row['inserts_per_second']:,.0f} inserts/s), "
            f"queries {row['queries_per_second']:,.1f}/s"
        )
    bb = results["batching"]
    print(
        f"batching: {bb['per_request']['invocations']} -> {bb['batched']['invocations']} "
        f"invocations ({bb['invocation_reduction']:.1f}x), modeled speedup "
        f"{bb['modeled_speedup']:.1f}x"
    )
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nann", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--users", type=int, default=None)
    p.add_argument("--items", type=int, default=None)
    p.add_argument("--dx", type=int, default=None)
    p.add_argument("--zdim", type=int, default=None)
    p.add_argument("--density", type=float, default=None)
    p.set_defaults(func=cmd_gen, stage="gen")

    p = sub.add_parser("train", help="train the relevance model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    p.add_argument("--lambda-scl", type=float, default=None, dest="lambda_scl")
    p.set_defaults(func=cmd_train, stage="train")

    p = sub.add_parser("build", help="build the graph index from a trained model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--efc", type=int, default=None)
    p.set_defaults(func=cmd_build, stage="build")

    p = sub.add_parser("search", help="run one query against an index")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--k-parallel", type=int, default=None, dest="k_parallel")
    p.add_argument("--hops", type=int, default=None)
    p.set_defaults(func=cmd_search, stage="search")

    p = sub.add_parser("eval", help="full pipeline with metrics")
    common(p)
    p.add_argument("--no-scl", action="store_true", dest="no_scl")
    p.add_argument("--no-multirel", action="store_true", dest="no_multirel")
    p.add_argument("--no-parallel", action="store_true", dest="no_parallel")
    p.add_argument("--no-batching", action="store_true", dest="no_batching")
    p.set_defaults(func=cmd_eval, stage="eval")

    p = sub.add_parser("bench", help="kernel backend and batching benchmarks")
    common(p)
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_bench, stage="bench")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"[{args.stage}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
