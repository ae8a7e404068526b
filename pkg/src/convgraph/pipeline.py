"""End-to-end turn answering over retrieval fixtures.

Retrieval is fixture-based: evidence pools per (conv_id, turn) stand in for a
live KB/Wikipedia retriever, which keeps every downstream stage reproducible.
A fixed seed makes the whole run byte-deterministic, including the emitted
graphs, records and metrics report.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConvGraphError, InvalidInputError
from .evidence import Evidence, Interaction, build_query, read_interactions, read_pools
from .evaluation import (
    EvalRecord,
    score_turn,
    stratify,
    write_eval_records,
    write_metrics_report,
    MetricsReport,
)
from .gat import gat_forward
from .graph import GraphBuildOptions, Vocab, build_graph, serialize_graph
from .linearize import LinearizeOptions, linearize_evidence
from .lm import (
    DEFAULT_PREFIX,
    DEFAULT_SUFFIX_SKELETON,
    assemble_embeddings,
    build_prompt,
    generate,
    load_prompt_config,
)
from .memory import EvidenceMemory, merge_with_memory, update_memory
from .ranking import EmbeddingCosineScorer, TfidfCosineScorer, rank_evidence
from .training import ModelDims, ModelParams, init_model_params, load_checkpoint

logger = logging.getLogger(__name__)

__all__ = ["PipelineConfig", "TurnResult", "prepare_pool", "answer_turn", "run_pipeline"]


@dataclass(frozen=True)
class PipelineConfig:
    interactions: str = ""
    pools: str = ""
    vocab: str = ""
    entities: str = ""
    out_dir: str = "out"
    checkpoint: str = ""
    embeddings: str = ""
    prompts: str = ""
    k: int = 50
    rho: float = 1.0 / 3.0
    memory_mode: str = "on"  # on | off | random
    scorer: str = "tfidf"  # tfidf | embed
    history_mode: str = "predicted"  # predicted | gold
    seed: int = 0
    max_gen_tokens: int = 32
    workers: int = 1
    prepend_title_table: bool = True
    prepend_title_text: bool = True
    add_reverse_chain: bool = False
    link_span_tokens: str = "head"
    collapse_entity_spans: bool = False
    d_model: int = 64
    lm_layers: int = 2
    lm_heads: int = 2
    ffn_mult: int = 4
    gat_layers: int = 2
    gat_heads: int = 2
    gat_dropout: float = 0.5
    lora_rank: int = 4
    lora_alpha: float = 32.0
    lora_dropout: float = 0.05

    def __post_init__(self):
        if self.memory_mode not in ("on", "off", "random"):
            raise InvalidInputError(f"memory_mode must be on|off|random, got {self.memory_mode}")
        if self.scorer not in ("tfidf", "embed"):
            raise InvalidInputError(f"scorer must be tfidf|embed, got {self.scorer}")
        if self.history_mode not in ("predicted", "gold"):
            raise InvalidInputError(f"history_mode must be predicted|gold, got {self.history_mode}")

    def model_dims(self) -> ModelDims:
        return ModelDims(
            d_model=self.d_model,
            lm_layers=self.lm_layers,
            lm_heads=self.lm_heads,
            ffn_mult=self.ffn_mult,
            gat_layers=self.gat_layers,
            gat_heads=self.gat_heads,
            gat_dropout=self.gat_dropout,
            lora_rank=self.lora_rank,
            lora_alpha=self.lora_alpha,
            lora_dropout=self.lora_dropout,
        )

    def linearize_options(self) -> LinearizeOptions:
        return LinearizeOptions(
            prepend_title_table=self.prepend_title_table,
            prepend_title_text=self.prepend_title_text,
        )

    def graph_options(self) -> GraphBuildOptions:
        return GraphBuildOptions(
            add_reverse_chain=self.add_reverse_chain,
            link_span_tokens=self.link_span_tokens,
            collapse_entity_spans=self.collapse_entity_spans,
        )

    @staticmethod
    def from_file(path: str | Path) -> "PipelineConfig":
        values = _parse_kv_file(path)
        return PipelineConfig(**values)

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        clean = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **clean) if clean else self


_BOOL_FIELDS = {
    "prepend_title_table",
    "prepend_title_text",
    "add_reverse_chain",
    "collapse_entity_spans",
}
_INT_FIELDS = {
    "k", "seed", "max_gen_tokens", "workers", "d_model", "lm_layers", "lm_heads",
    "ffn_mult", "gat_layers", "gat_heads", "lora_rank",
}
_FLOAT_FIELDS = {"rho", "gat_dropout", "lora_alpha", "lora_dropout"}


def _parse_kv_file(path: str | Path) -> dict:
    values: dict = {}
    valid = set(PipelineConfig.__dataclass_fields__)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InvalidInputError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in valid:
                raise InvalidInputError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in _BOOL_FIELDS:
                values[key] = raw.lower() in ("1", "true", "yes", "on")
            elif key in _INT_FIELDS:
                values[key] = int(raw)
            elif key in _FLOAT_FIELDS:
                values[key] = float(raw)
            else:
                values[key] = raw
    return values


@dataclass
class TurnResult:
    conv_id: str
    turn: int
    merged_ids: list[str]
    graph_path: str
    generated: str
    record: EvalRecord | None
    error: str = ""


def prepare_pool(pool: list[Evidence], options: LinearizeOptions) -> list[Evidence]:
    """Linearize every instance; raw text payloads expand to one instance per sentence."""
    from .linearize import split_sentences

    out: list[Evidence] = []
    for ev in pool:
        if ev.source_kind.value == "text" and "text" in ev.payload and "sentence" not in ev.payload:
            sentences = split_sentences(ev.article_title or "", ev.payload["text"], prepend_title=False)
            for i, sentence in enumerate(sentences):
                child = Evidence(
                    evidence_id=f"{ev.evidence_id}#s{i}",
                    source_kind=ev.source_kind,
                    payload={"sentence": sentence},
                    article_title=ev.article_title,
                    entities=ev.entities,
                    origin_turn=ev.origin_turn,
                )
                out.append(linearize_evidence(child, options))
        else:
            out.append(linearize_evidence(ev, options))
    return out


def _merged_lexicon(merged: list[Evidence]):
    by_id = {}
    for ev in merged:
        for ent in ev.entities:
            by_id.setdefault(ent.entity_id, ent)
    return [by_id[k] for k in sorted(by_id)]


def _build_scorer(config: PipelineConfig, memory: EvidenceMemory):
    if config.scorer == "embed":
        return EmbeddingCosineScorer(config.embeddings)
    return TfidfCosineScorer([ev.linearized for ev in memory.items])


def answer_turn(
    interaction: Interaction,
    turn_index: int,
    pool: list[Evidence],
    memory: EvidenceMemory,
    model: ModelParams,
    vocab: Vocab,
    config: PipelineConfig,
    rng: np.random.Generator,
    predicted_so_far: dict[int, str],
    out_dir: Path | None = None,
    prompt_skeletons: dict[str, str] | None = None,
) -> tuple[TurnResult, EvidenceMemory]:
    """One full turn: query, rank, merge, graph, encode, generate, score, remember."""
    turn = interaction.turns[turn_index - 1]
    history = []
    for prev in interaction.turns[: turn_index - 1]:
        if config.history_mode == "predicted":
            answer = predicted_so_far.get(prev.index) or prev.gold_answer
        else:
            answer = prev.gold_answer
        history.append((prev.question, answer))

    query = build_query(history, turn.question)
    pool = [ev.with_origin_turn(turn_index) for ev in prepare_pool(pool, config.linearize_options())]
    ranked = rank_evidence(query, pool, config.k)

    if config.memory_mode == "off" or turn_index == 1:
        merged = [r.evidence for r in ranked]
    else:
        merged = merge_with_memory(
            ranked,
            memory,
            query,
            _build_scorer(config, memory),
            config.rho,
            mode="random" if config.memory_mode == "random" else "rerank",
            rng=rng,
        )

    lexicon = _merged_lexicon(merged)
    graph = build_graph(merged, lexicon, vocab, turn=turn_index, options=config.graph_options())
    h_g = gat_forward(graph, model.gat, model.node_table)
    if not np.isfinite(h_g).all():
        raise ConvGraphError(
            f"non-finite graph encoding at {interaction.conv_id} turn {turn_index}"
        )

    skeletons = prompt_skeletons or {}
    prompt = build_prompt(
        history,
        turn.question,
        prefix=skeletons.get("prefix", DEFAULT_PREFIX),
        suffix_skeleton=skeletons.get("suffix", DEFAULT_SUFFIX_SKELETON),
    )
    assembled = assemble_embeddings(prompt.prefix, h_g, prompt.suffix, model.lm, vocab)
    generated = generate(
        assembled.h.data, model.lm, model.adapters, vocab, max_tokens=config.max_gen_tokens
    )

    record = score_turn(
        conv_id=interaction.conv_id,
        turn=turn_index,
        domain=interaction.domain,
        answer_source=turn.answer_source,
        generated=generated,
        candidates=lexicon,
        gold=turn.gold_answer,
        gold_aliases=turn.gold_aliases,
    )

    graph_path = ""
    if out_dir is not None:
        conv_dir = out_dir / interaction.conv_id
        conv_dir.mkdir(parents=True, exist_ok=True)
        path = conv_dir / f"turn_{turn_index}.graph.json"
        path.write_bytes(serialize_graph(graph))
        graph_path = str(path)

    if memory.turn != turn_index:  # memory advances strictly one turn at a time
        raise ConvGraphError(
            f"memory at turn {memory.turn} cannot absorb results of turn {turn_index}"
        )
    new_memory = update_memory(memory, ranked)

    result = TurnResult(
        conv_id=interaction.conv_id,
        turn=turn_index,
        merged_ids=[ev.evidence_id for ev in merged],
        graph_path=graph_path,
        generated=generated,
        record=record,
    )
    return result, new_memory


def _run_conversation(
    interaction: Interaction,
    pools: dict[tuple[str, int], list[Evidence]],
    model: ModelParams,
    vocab: Vocab,
    config: PipelineConfig,
    seed_seq: np.random.SeedSequence,
    out_dir: Path,
    prompt_skeletons: dict[str, str] | None,
) -> tuple[list[TurnResult], str]:
    """All turns of one conversation; returns results plus an abort reason if any."""
    rng = np.random.default_rng(seed_seq)
    memory = EvidenceMemory.empty()
    predicted: dict[int, str] = {}
    results: list[TurnResult] = []
    for turn in interaction.turns:
        key = (interaction.conv_id, turn.index)
        pool = pools.get(key)
        if pool is None:
            logger.warning("no evidence pool for %s turn %d; turn skipped", *key)
            results.append(
                TurnResult(
                    conv_id=interaction.conv_id,
                    turn=turn.index,
                    merged_ids=[],
                    graph_path="",
                    generated="",
                    record=None,
                    error="missing evidence pool",
                )
            )
            memory = update_memory(memory, [])  # keep the turn counter aligned
            continue
        try:
            result, memory = answer_turn(
                interaction,
                turn.index,
                pool,
                memory,
                model,
                vocab,
                config,
                rng,
                predicted,
                out_dir=out_dir,
                prompt_skeletons=prompt_skeletons,
            )
        except ConvGraphError as exc:
            logger.error("conversation %s aborted at turn %d: %s", interaction.conv_id, turn.index, exc)
            return results, str(exc)
        predicted[turn.index] = result.generated
        results.append(result)
    return results, ""


def run_pipeline(config: PipelineConfig) -> tuple[MetricsReport, int]:
    """Answer every turn of every fixture conversation and write all artifacts.

    Returns the metrics report and an exit status: 0 clean, 1 when any turn
    was skipped or a conversation aborted.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    interactions = sorted(read_interactions(config.interactions), key=lambda i: i.conv_id)
    pools = read_pools(config.pools)
    vocab = Vocab.from_file(config.vocab)
    prompt_skeletons = load_prompt_config(config.prompts) if config.prompts else None

    if config.checkpoint:
        model = load_checkpoint(config.checkpoint)
    else:
        model = init_model_params(np.random.default_rng(config.seed), len(vocab), config.model_dims())

    seeds = np.random.SeedSequence(config.seed).spawn(len(interactions))
    jobs = [
        (inter, pools, model, vocab, config, seeds[i], out_dir, prompt_skeletons)
        for i, inter in enumerate(interactions)
    ]
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool_exec:
            outcomes = list(pool_exec.map(lambda args: _run_conversation(*args), jobs))
    else:
        outcomes = [_run_conversation(*args) for args in jobs]

    all_results: list[TurnResult] = []
    aborts: list[str] = []
    for (results, abort) in outcomes:
        all_results.extend(results)
        if abort:
            aborts.append(abort)

    records = [r.record for r in all_results if r.record is not None]
    errors = [
        {"conv_id": r.conv_id, "turn": r.turn, "error": r.error}
        for r in all_results
        if r.error
    ]
    report = stratify(records)
    write_eval_records(records, out_dir / "eval_records.jsonl")
    write_metrics_report(report, out_dir / "metrics_report.json")

    results_payload = [
        {
            "conv_id": r.conv_id,
            "turn": r.turn,
            "merged_ids": r.merged_ids,
            "graph_path": r.graph_path,
            "generated": r.generated,
            "error": r.error,
        }
        for r in all_results
    ]
    (out_dir / "turn_results.json").write_text(
        json.dumps(results_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    config_dict = asdict(config)
    manifest = {
        "config": config_dict,
        "config_hash": hashlib.sha256(
            json.dumps(config_dict, sort_keys=True).encode("utf-8")
        ).hexdigest(),
        "seed": config.seed,
        "versions": {"convgraph": __version__, "numpy": np.__version__},
        "conversations": len(interactions),
        "turns": len(all_results),
        "skipped_turns": len(errors),
        "aborts": aborts,
        "errors": errors,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    exit_code = 1 if (errors or aborts) else 0
    return report, exit_code
