"""Central finite-difference verification of the analytic gradients.

Everything runs in float64 with deterministic seeds.  The relative error
uses a small denominator floor so exactly-zero gradient pairs compare clean.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .gat import gat_backward, gat_forward_tape, init_gat_params, NodeEmbeddingTable
from .lm import assemble_embeddings, lm_forward
from .synthetic import build_overfit_task, random_graph
from .training import ModelDims, build_training_input, init_model_params

__all__ = [
    "central_difference",
    "max_relative_error",
    "gat_gradcheck",
    "full_gradcheck",
]


def central_difference(f: Callable[[], float], array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d array entry, by symmetric perturbation in place."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f()
        flat[i] = orig - h
        f_minus = f()
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Relative error with an absolute-tolerance floor for near-zero entries.

    Entries below ``floor`` in magnitude compare on the ``floor`` scale, since
    central differences carry roundoff noise of order eps*|f|/h that would
    otherwise dominate genuinely tiny gradients.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gat_gradcheck(
    n_nodes: int = 20,
    seed: int = 0,
    d_model: int = 6,
    n_layers: int = 2,
    n_heads: int = 2,
    h: float = 1e-5,
    kink_margin: float = 1e-4,
) -> float:
    """Max relative error of the graph encoder's gradients on one random graph.

    Central differences are invalid within ``h`` of the LeakyReLU kink, so
    instances whose smallest |preactivation| falls under ``kink_margin`` are
    redrawn deterministically; the analytic gradient itself is fine there.
    """
    for attempt in range(64):
        rng = np.random.default_rng((seed, attempt))
        graph, vocab = random_graph(rng, max_nodes=n_nodes)
        params = init_gat_params(rng, d_model, n_layers=n_layers, n_heads=n_heads, dropout=0.0)
        table = NodeEmbeddingTable.from_matrix(rng.normal(0.0, 0.3, size=(len(vocab), d_model)))
        probe: list[float] = []
        gat_forward_tape(graph, params, table, probe=probe)
        if min(probe) >= kink_margin:
            break
    else:
        raise RuntimeError(f"no kink-free instance found for seed {seed}")
    weights = rng.normal(size=(len(graph.nodes), d_model))  # random scalarization

    def loss_value() -> float:
        out = gat_forward_tape(graph, params, table).output.data
        return float((out * weights).sum())

    tape = gat_forward_tape(graph, params, table)
    grads = gat_backward(tape, weights)

    worst = 0.0
    for li, layer in enumerate(params.layers):
        for hi, head in enumerate(layer.heads):
            for name, tensor in (("w", head.w), ("a", head.a)):
                numeric = central_difference(loss_value, tensor.data, h)
                worst = max(worst, max_relative_error(grads.layer_grads[li][hi][name], numeric))
    numeric = central_difference(loss_value, table.table.data, h)
    worst = max(worst, max_relative_error(grads.table, numeric))
    return worst


def full_gradcheck(seed: int = 0, max_nodes: int = 10, h: float = 1e-5, kink_margin: float = 1e-4) -> float:
    """Max relative error of the full loss through LM, injection, GAT and table."""
    vocab = None
    for attempt in range(64):
        rng = np.random.default_rng((seed, attempt))
        vocab, examples = build_overfit_task(rng, n_examples=3)
        dims = ModelDims(
            d_model=16,
            lm_layers=2,
            lm_heads=2,
            ffn_mult=2,
            gat_layers=2,
            gat_heads=2,
            gat_dropout=0.0,
            lora_rank=2,
            lora_dropout=0.0,
        )
        model = init_model_params(rng, len(vocab), dims)
        # nudge adapters off their zero init so gradients flow through both factors
        for adapter in model.adapters.values():
            adapter.b.data = rng.normal(0.0, 0.05, size=adapter.b.data.shape)
        example = examples[0]
        probe: list[float] = []
        gat_forward_tape(example.graph, model.gat, model.node_table, probe=probe)
        if min(probe) >= kink_margin:
            break
    else:
        raise RuntimeError(f"no kink-free instance found for seed {seed}")
    assert len(example.graph.nodes) <= max_nodes

    def loss_value() -> float:
        tape = gat_forward_tape(example.graph, model.gat, model.node_table)
        assembled = assemble_embeddings(example.prefix, tape.output, example.suffix, model.lm, vocab)
        h_full, target_ids, mask = build_training_input(assembled, example.answer, vocab, model.lm)
        _, loss = lm_forward(h_full, target_ids, mask, model.lm, model.adapters)
        return float(loss.data)

    trainables = model.trainable_tensors()
    for _, tensor in trainables:
        tensor.zero_grad()
    tape = gat_forward_tape(example.graph, model.gat, model.node_table)
    assembled = assemble_embeddings(example.prefix, tape.output, example.suffix, model.lm, vocab)
    h_full, target_ids, mask = build_training_input(assembled, example.answer, vocab, model.lm)
    _, loss = lm_forward(h_full, target_ids, mask, model.lm, model.adapters)
    loss.backward()

    worst = 0.0
    for _, tensor in trainables:
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        numeric = central_difference(loss_value, tensor.data, h)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst
