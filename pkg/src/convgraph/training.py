"""End-to-end training of the graph encoder, node embeddings and adapters.

The base language model stays frozen; gradient updates reach only the GAT
parameters, the node-embedding table (seeded as a copy of the frozen token
embeddings) and the LoRA adapters on the q/k/v projections.  Training is
single-threaded and seed-deterministic: the same seed reproduces the loss
trace exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import InvalidInputError, TrainingAbort
from .gat import GatParams, NodeEmbeddingTable, gat_forward_tape, init_gat_params
from .graph import EvidenceGraph, Vocab, deserialize_graph, serialize_graph, tokenize
from .lm import (
    AssembledInput,
    LoraAdapter,
    ToyLmParams,
    assemble_embeddings,
    init_lm_params,
    init_lora,
    lm_forward,
)

__all__ = [
    "ModelDims",
    "ModelParams",
    "init_model_params",
    "TrainConfig",
    "TrainExample",
    "Adam",
    "build_training_input",
    "train_loop",
    "save_checkpoint",
    "load_checkpoint",
    "write_loss_trace",
    "read_train_dataset",
    "write_train_dataset",
]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelDims:
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
    tied_output: bool = True


@dataclass
class ModelParams:
    """Everything the pipeline trains or serves: Theta."""

    lm: ToyLmParams
    adapters: dict[tuple[int, str], LoraAdapter]
    gat: GatParams
    node_table: NodeEmbeddingTable
    dims: ModelDims

    def trainable_tensors(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for (li, proj) in sorted(self.adapters):
            adapter = self.adapters[(li, proj)]
            out.append((f"lora.layer{li}.{proj}.a", adapter.a))
            out.append((f"lora.layer{li}.{proj}.b", adapter.b))
        out.extend(self.gat.named_tensors())
        out.append(("node_table", self.node_table.table))
        return out

    def frozen_tensors(self) -> list[tuple[str, Tensor]]:
        return self.lm.named_tensors()

    def all_tensors(self) -> list[tuple[str, Tensor]]:
        return self.trainable_tensors() + self.frozen_tensors()


def init_model_params(rng: np.random.Generator, vocab_size: int, dims: ModelDims | None = None) -> ModelParams:
    dims = dims or ModelDims()
    lm = init_lm_params(
        rng,
        vocab_size,
        d_model=dims.d_model,
        n_layers=dims.lm_layers,
        n_heads=dims.lm_heads,
        ffn_mult=dims.ffn_mult,
        tied_output=dims.tied_output,
    )
    adapters = {}
    for li in range(dims.lm_layers):
        for proj in ("q", "k", "v"):
            adapters[(li, proj)] = init_lora(
                rng,
                dims.d_model,
                dims.d_model,
                rank=dims.lora_rank,
                alpha=dims.lora_alpha,
                dropout=dims.lora_dropout,
            )
    gat = init_gat_params(
        rng, dims.d_model, n_layers=dims.gat_layers, n_heads=dims.gat_heads, dropout=dims.gat_dropout
    )
    # node embeddings start as a copy of the LM token table, then train freely
    node_table = NodeEmbeddingTable.from_matrix(lm.tok_emb.data, trainable=True)
    return ModelParams(lm=lm, adapters=adapters, gat=gat, node_table=node_table, dims=dims)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1
    grad_accum: int = 4
    max_steps: int = 100
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.lr < 0:
            raise InvalidInputError("learning rate must be >= 0")
        if self.grad_accum < 1:
            raise InvalidInputError("gradient accumulation must be >= 1")


@dataclass(frozen=True)
class TrainExample:
    example_id: str
    graph: EvidenceGraph
    prefix: str
    suffix: str
    answer: str


class Adam:
    def __init__(self, tensors: list[tuple[str, Tensor]], config: TrainConfig):
        self.config = config
        self.tensors = tensors
        self.m = {name: np.zeros_like(t.data) for name, t in tensors}
        self.v = {name: np.zeros_like(t.data) for name, t in tensors}
        self.t = 0

    def step(self) -> None:
        cfg = self.config
        self.t += 1
        for name, tensor in self.tensors:
            if tensor.grad is None:
                continue
            g = tensor.grad
            self.m[name] = cfg.beta1 * self.m[name] + (1 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1 - cfg.beta2) * (g * g)
            m_hat = self.m[name] / (1 - cfg.beta1**self.t)
            v_hat = self.v[name] / (1 - cfg.beta2**self.t)
            tensor.data = tensor.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

    def zero_grad(self) -> None:
        for _, tensor in self.tensors:
            tensor.zero_grad()


def build_training_input(
    assembled: AssembledInput,
    answer: str,
    vocab: Vocab,
    params: ToyLmParams,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Append teacher-forced answer rows (and eos) and build targets plus mask.

    Completion positions are exactly those whose target is an answer token or
    the closing eos; every prompt and graph position carries zero loss.
    """
    from . import autodiff as ad

    answer_ids = [tid for tid, _ in tokenize(answer, vocab)]
    if not answer_ids:
        raise InvalidInputError("answer tokenized to nothing")
    answer_ids.append(vocab.eos_id)
    answer_rows = ad.gather_rows(params.tok_emb, np.array(answer_ids, dtype=np.int64))
    h_full = ad.concat([assembled.h, answer_rows], axis=0)

    total = h_full.data.shape[0]
    prompt_len = assembled.total_len
    target_ids = np.zeros(total - 1, dtype=np.int64)
    mask = np.zeros(total - 1, dtype=bool)
    for offset, token_id in enumerate(answer_ids):
        pos = prompt_len - 1 + offset
        target_ids[pos] = token_id
        mask[pos] = True
    return h_full, target_ids, mask


def _param_norms(model: ModelParams) -> dict[str, float]:
    return {name: float(np.linalg.norm(t.data)) for name, t in model.trainable_tensors()}


def train_loop(
    dataset: list[TrainExample],
    config: TrainConfig,
    model: ModelParams,
    vocab: Vocab,
) -> list[tuple[int, str, float]]:
    """Adam over the trainable parameters with gradient accumulation.

    One step consumes one example (batch size 1); the optimizer applies an
    update every ``grad_accum`` steps.  Returns the per-step loss trace as
    (step, example_id, loss) tuples.  A non-finite loss aborts with a
    diagnostic dump of the step, example and parameter norms.
    """
    if not dataset:
        raise InvalidInputError("training dataset is empty")
    trainables = model.trainable_tensors()
    optimizer = Adam(trainables, config)
    optimizer.zero_grad()
    rng = np.random.default_rng(config.seed)
    trace: list[tuple[int, str, float]] = []
    order: list[int] = []
    pending = 0

    for step in range(1, config.max_steps + 1):
        if not order:
            order = list(range(len(dataset)))
            if config.shuffle:
                order = [int(i) for i in rng.permutation(len(dataset))]
        example = dataset[order.pop(0)]

        tape = gat_forward_tape(example.graph, model.gat, model.node_table, train=True, rng=rng)
        assembled = assemble_embeddings(example.prefix, tape.output, example.suffix, model.lm, vocab)
        h_full, target_ids, mask = build_training_input(assembled, example.answer, vocab, model.lm)
        _, loss = lm_forward(
            h_full, target_ids, mask, model.lm, model.adapters, train=True, rng=rng
        )
        loss_value = float(loss.data)
        if not math.isfinite(loss_value):
            raise TrainingAbort(
                f"non-finite loss {loss_value} at step {step} on {example.example_id}",
                step=step,
                example_id=example.example_id,
                param_norms=_param_norms(model),
            )
        trace.append((step, example.example_id, loss_value))
        (loss * (1.0 / config.grad_accum)).backward()
        pending += 1
        if pending == config.grad_accum:
            optimizer.step()
            optimizer.zero_grad()
            pending = 0

    if pending:
        optimizer.step()
        optimizer.zero_grad()
    return trace


def write_train_dataset(dataset: list[TrainExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            obj = {
                "example_id": ex.example_id,
                "graph": json.loads(serialize_graph(ex.graph)),
                "prefix": ex.prefix,
                "suffix": ex.suffix,
                "answer": ex.answer,
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_train_dataset(path: str | Path) -> list[TrainExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(
                TrainExample(
                    example_id=obj["example_id"],
                    graph=deserialize_graph(json.dumps(obj["graph"]).encode("utf-8")),
                    prefix=obj["prefix"],
                    suffix=obj["suffix"],
                    answer=obj["answer"],
                )
            )
    return out


def write_loss_trace(trace: list[tuple[int, str, float]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "example_id", "loss"])
        for step, example_id, loss in trace:
            writer.writerow([step, example_id, repr(loss)])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: ModelParams, path: str | Path) -> None:
    """JSON tensor dump with shape headers; field order is deterministic."""
    tensors = {}
    for name, tensor in model.all_tensors():
        tensors[name] = {
            "shape": list(tensor.data.shape),
            "data": tensor.data.reshape(-1).tolist(),
        }
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "dims": {
            "d_model": model.dims.d_model,
            "lm_layers": model.dims.lm_layers,
            "lm_heads": model.dims.lm_heads,
            "ffn_mult": model.dims.ffn_mult,
            "gat_layers": model.dims.gat_layers,
            "gat_heads": model.dims.gat_heads,
            "gat_dropout": model.dims.gat_dropout,
            "lora_rank": model.dims.lora_rank,
            "lora_alpha": model.dims.lora_alpha,
            "lora_dropout": model.dims.lora_dropout,
            "tied_output": model.dims.tied_output,
        },
        "vocab_size": model.lm.vocab_size,
        "tensors": tensors,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path: str | Path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise InvalidInputError(
            f"unsupported checkpoint version {payload.get('format_version')}"
        )
    dims = ModelDims(**payload["dims"])
    model = init_model_params(np.random.default_rng(0), payload["vocab_size"], dims)
    available = dict(model.all_tensors())
    for name, spec in payload["tensors"].items():
        if name not in available:
            raise InvalidInputError(f"checkpoint tensor {name} not in model")
        data = np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
        if data.shape != available[name].data.shape:
            raise InvalidInputError(
                f"checkpoint tensor {name} has shape {data.shape}, "
                f"expected {available[name].data.shape}"
            )
        available[name].data = data
    return model
