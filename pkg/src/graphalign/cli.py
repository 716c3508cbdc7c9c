"""Command-line pipelines: data generation, training, evaluation, analysis."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .datagen import (DatasetFormatError, SamplingConfig, generate_dataset,
                      load_dataset, save_dataset, synthetic_seed_graphs)
from .evaluation import alignment_quality, evaluate_split, histogram_and_summary, rank_corpus
from .graphs import GraphError, pad_pair
from .model import (ConfigError, ModelConfig, build_params, forward_pair,
                    model_grad_check)
from .params import CheckpointError, ParamStore, load_checkpoint, restore_into, save_checkpoint
from .qapgw import QapInstance, brute_force_min_cost, gw_pgd, qap_cost, round_to_permutation
from .training import TrainConfig, TrainingError, train_loop


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _write_csv(path: str, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _model_config(args, file_cfg: dict) -> ModelConfig:
    """CLI flag > config file > built-in defaults."""
    base = ModelConfig().to_dict()
    base.update({k: v for k, v in file_cfg.items() if k in base})
    overrides = {
        "variant": args.variant, "schedule": args.schedule,
        "interaction": args.interaction, "rounds": args.rounds,
        "layers": args.layers, "temperature": args.tau,
        "sinkhorn_iters": args.sinkhorn_iters,
        "noise": True if args.noise else None,
        "margin": getattr(args, "margin", None),
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig.from_dict(base)


def _load_file_config(args) -> dict:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            return json.load(fh)
    return {}


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file (flags take precedence)")
    p.add_argument("--variant", choices=["node", "edge"])
    p.add_argument("--schedule", choices=["lazy", "eager"])
    p.add_argument("--interaction", choices=["npp", "post", "uonly", "monly"])
    p.add_argument("-T", "--rounds", type=int)
    p.add_argument("-K", "--layers", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--sinkhorn-iters", type=int, dest="sinkhorn_iters")
    p.add_argument("--noise", action="store_true", default=None)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)


def _restore_model(checkpoint_path: str) -> tuple[ParamStore, ModelConfig]:
    tensors, config = load_checkpoint(checkpoint_path)
    cfg = ModelConfig.from_dict(config["model"])
    store = build_params(cfg, np.random.default_rng(0))
    restore_into(store, tensors)
    return store, cfg


def cmd_gen_data(args) -> int:
    cfg = SamplingConfig(
        n_queries=args.n_queries, n_corpus=args.n_corpus,
        query_size=tuple(args.query_size), corpus_size=tuple(args.corpus_size),
    )
    rng = np.random.default_rng([args.seed, 100])
    seeds = synthetic_seed_graphs(args.n_seeds, rng)
    dataset = generate_dataset(seeds, cfg, rng_seed=args.seed, threads=args.threads)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset.queries)} queries x {len(dataset.corpus)} corpus graphs "
          f"to {args.out} (positive fraction {dataset.positive_fraction:.3f})")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    model_cfg = _model_config(args, _load_file_config(args))
    train_cfg = TrainConfig(
        learning_rate=args.lr, weight_decay=args.weight_decay,
        batch_size=args.batch_size, max_epochs=args.epochs,
        patience=args.patience, tolerance=args.tolerance,
        triples_per_query=args.triples_per_query,
        seed=args.seed, threads=args.threads,
    ).validate()
    os.makedirs(args.out, exist_ok=True)
    result = train_loop(dataset, model_cfg, train_cfg)
    store = build_params(model_cfg, np.random.default_rng(train_cfg.seed))
    restore_into(store, result.best_params)
    ckpt = os.path.join(args.out, "checkpoint.bin")
    save_checkpoint(store, ckpt, config={"model": model_cfg.to_dict(),
                                         "train": train_cfg.to_dict()})
    _write_csv(os.path.join(args.out, "history.csv"), result.history,
               ["epoch", "train_loss", "val_map", "wall_ms"])
    print(f"best val MAP {result.best_val_map:.4f} at epoch {result.best_epoch}; "
          f"checkpoint at {ckpt}")
    return 0


def cmd_evaluate(args) -> int:
    dataset = load_dataset(args.dataset)
    store, cfg = _restore_model(args.checkpoint)
    summary = evaluate_split(dataset, store, cfg, split=args.split, threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "metrics.csv"), summary.per_query,
               ["query_id", "ap", "hits20", "rr", "p20"])
    _write_csv(os.path.join(args.out, "metrics_summary.csv"),
               [{"map": summary.map, "hits20": summary.hits_at_20,
                 "mrr": summary.mrr, "p20": summary.precision_at_20}],
               ["map", "hits20", "mrr", "p20"])
    print(f"MAP {summary.map:.4f}  HITS@20 {summary.hits_at_20:.4f}  "
          f"MRR {summary.mrr:.4f}  P@20 {summary.precision_at_20:.4f}")
    return 0


def cmd_rank(args) -> int:
    dataset = load_dataset(args.dataset)
    store, cfg = _restore_model(args.checkpoint)
    ranked = rank_corpus(args.query, dataset, store, cfg, threads=args.threads)
    rows = [{"rank": i + 1, "corpus_id": c, "distance": d, "label": l}
            for i, (c, d, l) in enumerate(zip(ranked.corpus_ids, ranked.distances,
                                              ranked.labels))]
    _write_csv(args.out, rows, ["rank", "corpus_id", "distance", "label"])
    print(f"wrote ranking of {len(rows)} corpus graphs for query {args.query} to {args.out}")
    return 0


def cmd_analyze_alignment(args) -> int:
    dataset = load_dataset(args.dataset)
    store, cfg = _restore_model(args.checkpoint)
    granularity = cfg.variant
    records = []
    for qi in dataset.query_ids(args.split):
        for ci in np.flatnonzero(dataset.relevance[qi] == 1):
            pair = pad_pair(dataset.queries[qi], dataset.corpus[int(ci)], with_gold=True)
            trace = forward_pair(pair, store, cfg)
            rec = alignment_quality(trace.alignment_arrays(), pair,
                                    pair_id=(qi, int(ci)), granularity=granularity)
            if rec is not None:
                records.append(rec)
    hist_rows, mean_rows = histogram_and_summary(records)
    os.makedirs(args.out, exist_ok=True)
    trace_rows = [
        {"query_id": r.pair_id[0], "corpus_id": r.pair_id[1], "stage": t + 1,
         "trace": tr, "normalized": nv}
        for r in records for t, (tr, nv) in enumerate(zip(r.traces, r.normalized))
    ]
    _write_csv(os.path.join(args.out, "alignment_trace.csv"), trace_rows,
               ["query_id", "corpus_id", "stage", "trace", "normalized"])
    _write_csv(os.path.join(args.out, "alignment_hist.csv"), hist_rows,
               ["stage", "bin_lo", "density"])
    _write_csv(os.path.join(args.out, "alignment_means.csv"), mean_rows,
               ["stage", "mean_normalized_trace"])
    for row in mean_rows:
        print(f"stage {row['stage']}: mean normalized trace "
              f"{row['mean_normalized_trace']:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _model_config(args, _load_file_config(args))
    worst = model_grad_check(cfg, seed=args.seed, eps=args.eps)
    print(f"variant={cfg.variant} schedule={cfg.schedule} T={cfg.rounds} K={cfg.layers}: "
          f"max relative gradient error {worst:.3e}")
    return 0 if worst < 1e-4 else 1


def cmd_qap_bench(args) -> int:
    from .datagen import random_connected_graph
    from .graphs import relabel_graph

    rng = np.random.default_rng(args.seed)
    rows = []
    solved = 0
    brute_checked = 0
    brute_agree = 0
    for inst_id in range(args.instances):
        g = random_connected_graph(args.n, rng)
        perm = rng.permutation(args.n).tolist()
        h = relabel_graph(g, perm)
        inst = QapInstance(g.adjacency.copy(), h.adjacency.copy())
        plans, costs = gw_pgd(inst, tau=args.tau, steps=args.steps)
        for step, cost in enumerate(costs):
            rows.append({"instance": inst_id, "step": step, "cost": cost})
        rounded = round_to_permutation(plans[-1])
        final = qap_cost(inst, rounded)
        if final == 0.0:
            solved += 1
        if args.n <= 8:
            brute_cost, _ = brute_force_min_cost(inst)
            brute_checked += 1
            if brute_cost == 0.0:
                brute_agree += 1
    _write_csv(args.out, rows, ["instance", "step", "cost"])
    print(f"rounded PGD plan reached cost 0 on {solved}/{args.instances} instances")
    if brute_checked:
        print(f"brute force confirms cost 0 exists on {brute_agree}/{brute_checked} "
              f"(isomorphic by construction)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphalign",
        description="Alignment-refining graph retrieval models and their combinatorial referees",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample a labeled query/corpus dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-queries", type=int, default=300)
    p.add_argument("--n-corpus", type=int, default=800)
    p.add_argument("--query-size", type=int, nargs=2, default=[6, 15])
    p.add_argument("--corpus-size", type=int, nargs=2, default=[17, 20])
    p.add_argument("--n-seeds", type=int, default=24)
    _add_common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model with pairwise hinge loss")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--triples-per-query", type=int, default=20)
    p.add_argument("--margin", type=float)
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="retrieval metrics on a split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    _add_common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("rank", help="ranked corpus list for one query")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--query", type=int, required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("analyze-alignment", help="alignment quality vs gold mappings")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    _add_common(p)
    p.set_defaults(fn=cmd_analyze_alignment)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full forward pass")
    p.add_argument("--eps", type=float, default=3e-5)
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("qap-bench", help="projected-gradient coverage-cost trajectories")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--tau", type=float, default=0.05)
    _add_common(p)
    p.set_defaults(fn=cmd_qap_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, DatasetFormatError, GraphError,
            TrainingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
