"""Command-line interface: run the pipeline or any stage in isolation.

Exit codes: 0 success, 1 recoverable errors present, 2 fatal (bad files or
arguments).  Configuration comes from a flat key=value file overridden by
flags; environment variables are never read.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConvGraphError
from .evidence import (
    build_query,
    evidence_from_dict,
    evidence_to_dict,
    read_interactions,
    read_pools,
)
from .evaluation import read_eval_records, stratify, write_metrics_report
from .gradcheck import full_gradcheck, gat_gradcheck
from .graph import Vocab, build_graph, read_entities, serialize_graph
from .pipeline import PipelineConfig, prepare_pool, run_pipeline
from .ranking import rank_evidence
from .training import (
    TrainConfig,
    init_model_params,
    load_checkpoint,
    read_train_dataset,
    save_checkpoint,
    train_loop,
    write_loss_trace,
)


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    overrides = {
        "seed": args.seed,
        "k": args.k,
        "rho": args.rho,
        "memory_mode": args.memory,
        "scorer": args.scorer,
        "out_dir": args.out,
    }
    return config.with_overrides(**overrides)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--k", type=int, default=None, help="top-k evidence per turn")
    parser.add_argument("--rho", type=float, default=None, help="memory replacement fraction")
    parser.add_argument("--memory", choices=["on", "off", "random"], default=None)
    parser.add_argument("--scorer", choices=["tfidf", "embed"], default=None)
    parser.add_argument("--out", default=None, help="output directory")


def cmd_ingest(args) -> int:
    config = _load_config(args)
    pools = read_pools(args.pools or config.pools)
    if args.interactions or config.interactions:
        read_interactions(args.interactions or config.interactions)  # schema validation
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "pools.linearized.jsonl"
    with open(out_path, "w", encoding="utf-8") as fh:
        for (conv_id, turn) in sorted(pools):
            prepared = prepare_pool(pools[(conv_id, turn)], config.linearize_options())
            obj = {
                "conv_id": conv_id,
                "turn": turn,
                "evidence": [evidence_to_dict(e) for e in prepared],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    print(f"ingest: wrote {out_path}")
    return 0


def cmd_rank(args) -> int:
    config = _load_config(args)
    interactions = {i.conv_id: i for i in read_interactions(args.interactions or config.interactions)}
    pools = read_pools(args.pools or config.pools)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "rankings.jsonl"
    with open(out_path, "w", encoding="utf-8") as fh:
        for (conv_id, turn) in sorted(pools):
            inter = interactions.get(conv_id)
            if inter is None or turn > len(inter.turns):
                continue
            history = [(t.question, t.gold_answer) for t in inter.turns[: turn - 1]]
            query = build_query(history, inter.turns[turn - 1].question)
            prepared = prepare_pool(pools[(conv_id, turn)], config.linearize_options())
            ranked = rank_evidence(query, prepared, config.k)
            obj = {
                "conv_id": conv_id,
                "turn": turn,
                "ranking": [
                    {"evidence_id": r.evidence.evidence_id, "score": r.score, "rank": r.rank}
                    for r in ranked
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    print(f"rank: wrote {out_path}")
    return 0


def cmd_build_graph(args) -> int:
    config = _load_config(args)
    with open(args.pool, encoding="utf-8") as fh:
        obj = json.load(fh)
    pool = [evidence_from_dict(e) for e in obj["evidence"]]
    pool = prepare_pool(pool, config.linearize_options())
    vocab = Vocab.from_file(args.vocab or config.vocab)
    if args.entities or config.entities:
        lexicon = read_entities(args.entities or config.entities)
    else:
        by_id = {}
        for ev in pool:
            for ent in ev.entities:
                by_id.setdefault(ent.entity_id, ent)
        lexicon = [by_id[k] for k in sorted(by_id)]
    graph = build_graph(
        pool, lexicon, vocab, turn=int(obj.get("turn", 1)), options=config.graph_options()
    )
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "graph.json"
    out_path.write_bytes(serialize_graph(graph))
    print(f"build-graph: wrote {out_path} ({len(graph.nodes)} nodes, {len(graph.edges)} edges)")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    vocab = Vocab.from_file(args.vocab or config.vocab)
    dataset = read_train_dataset(args.dataset)
    if args.resume:
        model = load_checkpoint(args.resume)
    else:
        model = init_model_params(np.random.default_rng(config.seed), len(vocab), config.model_dims())
    train_config = TrainConfig(
        lr=args.lr, max_steps=args.steps, grad_accum=args.grad_accum, seed=config.seed
    )
    trace = train_loop(dataset, train_config, model, vocab)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out_dir / "checkpoint.json")
    write_loss_trace(trace, out_dir / "loss_trace.csv")
    print(
        f"train: {len(trace)} steps, final loss {trace[-1][2]:.4f}; "
        f"wrote {out_dir / 'checkpoint.json'}"
    )
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    records = read_eval_records(args.records)
    report = stratify(records)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "metrics_report.json"
    write_metrics_report(report, out_path)
    print(
        f"eval: {report.count} records, H@1 {report.overall_hit1:.3f}, "
        f"H@5 {report.overall_hit5:.3f}; wrote {out_path}"
    )
    return 0


def cmd_pipeline(args) -> int:
    config = _load_config(args)
    report, exit_code = run_pipeline(config)
    print(
        f"pipeline: {report.count} turns, H@1 {report.overall_hit1:.3f}, "
        f"H@5 {report.overall_hit5:.3f} (exit {exit_code})"
    )
    return exit_code


def cmd_gradcheck(args) -> int:
    gat_err = gat_gradcheck(n_nodes=args.nodes, seed=args.seed or 0)
    print(f"gradcheck: GAT-only max relative error {gat_err:.3e} (threshold 1e-5)")
    ok = gat_err < 1e-5
    if args.full:
        full_err = full_gradcheck(seed=args.seed or 0)
        print(f"gradcheck: full-loss max relative error {full_err:.3e} (threshold 1e-4)")
        ok = ok and full_err < 1e-4
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="convgraph",
        description="Graph-augmented conversational QA over heterogeneous evidence fixtures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and linearize evidence pools")
    _add_common(p)
    p.add_argument("--pools", help="pools.jsonl path")
    p.add_argument("--interactions", help="interactions.jsonl path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("rank", help="BM25-rank pools against gold-history queries")
    _add_common(p)
    p.add_argument("--pools")
    p.add_argument("--interactions")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("build-graph", help="build one evidence graph from a pool file")
    _add_common(p)
    p.add_argument("--pool", required=True, help="JSON file with one pool record")
    p.add_argument("--vocab")
    p.add_argument("--entities")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train GAT, node embeddings and adapters")
    _add_common(p)
    p.add_argument("--dataset", required=True, help="training dataset jsonl")
    p.add_argument("--vocab")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--grad-accum", type=int, default=4)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="stratified metrics from eval records")
    _add_common(p)
    p.add_argument("--records", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="full fixture run: rank, merge, graph, generate, score")
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_common(p)
    p.add_argument("--nodes", type=int, default=10)
    p.add_argument("--full", action="store_true", help="also check the full loss path")
    p.set_defaults(func=cmd_gradcheck)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConvGraphError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
