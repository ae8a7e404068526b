"""Graph attention encoder over evidence graphs.

Attention follows the two-step scoring of GATv2: a shared per-head linear map
is applied to the concatenated (target, source) pair, passed through
LeakyReLU, then projected by the head's attention vector; coefficients are a
softmax over each node's in-neighbors.  Node features are updated with the
source block of the same linear map, so one W per head serves both scoring
and value aggregation.  Message passing runs over the edge list directly; no
sparse-matrix library is involved.

Node embeddings come from a dedicated table that is initialized as a copy of
the language model's token embeddings and trained independently afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidInputError, InvalidStateError
from .graph import EvidenceGraph

__all__ = [
    "NodeEmbeddingTable",
    "GatHeadParams",
    "GatLayerParams",
    "GatParams",
    "init_gat_params",
    "init_node_embeddings",
    "attention_coefficients",
    "gat_layer_forward",
    "gat_forward",
    "gat_forward_tape",
    "gat_backward",
    "GatTape",
    "GatGradients",
    "graph_edge_arrays",
]

DEFAULT_LEAKY_SLOPE = 0.2
DEFAULT_GAT_DROPOUT = 0.5


@dataclass
class NodeEmbeddingTable:
    """|vocab| x d embedding rows for graph nodes, separate from the base model."""

    table: Tensor

    @property
    def dim(self) -> int:
        return self.table.data.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.table.data.shape[0]

    @staticmethod
    def from_matrix(matrix: np.ndarray, trainable: bool = True) -> "NodeEmbeddingTable":
        return NodeEmbeddingTable(table=Tensor(matrix.copy(), requires_grad=trainable))


@dataclass
class GatHeadParams:
    w: Tensor  # (d_head, 2*d_in): [target block | source block]
    a: Tensor  # (d_head,)


@dataclass
class GatLayerParams:
    heads: list[GatHeadParams]
    leaky_slope: float = DEFAULT_LEAKY_SLOPE

    @property
    def d_in(self) -> int:
        return self.heads[0].w.data.shape[1] // 2

    @property
    def d_head(self) -> int:
        return self.heads[0].w.data.shape[0]


@dataclass
class GatParams:
    layers: list[GatLayerParams] = field(default_factory=list)
    dropout: float = DEFAULT_GAT_DROPOUT

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for li, layer in enumerate(self.layers):
            for hi, head in enumerate(layer.heads):
                out.append((f"gat.layer{li}.head{hi}.w", head.w))
                out.append((f"gat.layer{li}.head{hi}.a", head.a))
        return out


def init_gat_params(
    rng: np.random.Generator,
    d_model: int,
    n_layers: int = 2,
    n_heads: int = 2,
    dropout: float = DEFAULT_GAT_DROPOUT,
    leaky_slope: float = DEFAULT_LEAKY_SLOPE,
) -> GatParams:
    """Layer dimensions chain so the (head-averaged) final output equals d_model.

    Intermediate layers concatenate heads, so their head width is
    d_model // n_heads; the last layer averages heads at full width.
    """
    if n_layers > 0 and d_model % n_heads != 0:
        raise InvalidInputError(f"d_model {d_model} not divisible by {n_heads} heads")
    layers = []
    for li in range(n_layers):
        last = li == n_layers - 1
        d_head = d_model if last else d_model // n_heads
        heads = []
        for _ in range(n_heads):
            scale = np.sqrt(2.0 / (2 * d_model + d_head))
            w = ad.parameter(rng.normal(0.0, scale, size=(d_head, 2 * d_model)))
            a = ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(d_head), size=(d_head,)))
            heads.append(GatHeadParams(w=w, a=a))
        layers.append(GatLayerParams(heads=heads, leaky_slope=leaky_slope))
    return GatParams(layers=layers, dropout=dropout)


def graph_edge_arrays(g: EvidenceGraph) -> tuple[np.ndarray, np.ndarray]:
    src = np.array([e.src for e in g.edges], dtype=np.int64)
    dst = np.array([e.dst for e in g.edges], dtype=np.int64)
    return src, dst


def init_node_embeddings(g: EvidenceGraph, table: NodeEmbeddingTable) -> Tensor:
    """Row i of the output is the table row of node i's token id."""
    token_ids = np.array([n.token_id for n in g.nodes], dtype=np.int64)
    if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= table.vocab_size):
        raise InvalidStateError(
            f"graph token id out of range for table of {table.vocab_size} rows"
        )
    return ad.gather_rows(table.table, token_ids)


def _check_in_edges(n_nodes: int, dst: np.ndarray) -> None:
    if n_nodes == 0:
        return
    has_in = np.zeros(n_nodes, dtype=bool)
    has_in[dst] = True
    if not has_in.all():
        missing = int(np.flatnonzero(~has_in)[0])
        raise InvalidStateError(f"node {missing} has no in-edges; softmax undefined")


def _head_attention(
    x: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    n_nodes: int,
    head: GatHeadParams,
    leaky_slope: float,
    probe: list[float] | None = None,
) -> tuple[Tensor, Tensor]:
    """Per-edge attention coefficients and per-node source projections.

    Returns (alpha over edges in input order, source-block projection of x).
    ``probe`` collects the smallest |preactivation| fed to LeakyReLU, which
    finite-difference checks use to stay clear of the kink.
    """
    d_in = head.w.data.shape[1] // 2
    w_tgt = ad.narrow(head.w, 1, 0, d_in)
    w_src = ad.narrow(head.w, 1, d_in, d_in)
    proj_tgt = x @ w_tgt.T  # (n, d_head)
    proj_src = x @ w_src.T
    pre = ad.gather_rows(proj_tgt, dst) + ad.gather_rows(proj_src, src)
    if probe is not None:
        probe.append(float(np.min(np.abs(pre.data))) if pre.data.size else float("inf"))
    scores = ad.leaky_relu(pre, leaky_slope) @ head.a  # (E,)

    # softmax over in-neighbors of each target, stabilized by the per-target max
    shift = np.full(n_nodes, -np.inf)
    np.maximum.at(shift, dst, scores.data)
    z = (scores - shift[dst]).exp()
    denom = ad.segment_sum(z.reshape(-1, 1), dst, n_nodes)
    alpha = z / ad.gather_rows(denom, dst).reshape(-1)
    return alpha, proj_src


def attention_coefficients(
    x: Tensor | np.ndarray,
    edges: tuple[np.ndarray, np.ndarray],
    layer: GatLayerParams,
    head: int,
) -> np.ndarray:
    """Attention coefficients of one head, aligned with the given edge order."""
    x = ad.as_tensor(x)
    src, dst = edges
    n_nodes = x.data.shape[0]
    _check_in_edges(n_nodes, dst)
    alpha, _ = _head_attention(x, src, dst, n_nodes, layer.heads[head], layer.leaky_slope)
    return alpha.data


def gat_layer_forward(
    x: Tensor,
    edges: tuple[np.ndarray, np.ndarray],
    layer: GatLayerParams,
    mode: str = "concat",
    train: bool = False,
    dropout_p: float = 0.0,
    rng: np.random.Generator | None = None,
    probe: list[float] | None = None,
) -> Tensor:
    """One multi-head layer: ELU of the alpha-weighted sum of source projections.

    ``mode`` selects head concatenation (intermediate layers) or averaging
    (final layer).  Dropout is applied to the attention coefficients during
    training only.
    """
    if mode not in ("concat", "average"):
        raise InvalidInputError(f"mode must be concat|average, got {mode}")
    src, dst = edges
    n_nodes = x.data.shape[0]
    _check_in_edges(n_nodes, dst)
    head_outputs = []
    for head in layer.heads:
        alpha, proj_src = _head_attention(
            x, src, dst, n_nodes, head, layer.leaky_slope, probe=probe
        )
        if train and dropout_p > 0.0:
            if rng is None:
                raise InvalidInputError("training-mode dropout requires a generator")
            alpha = ad.dropout(alpha, dropout_p, rng, training=True)
        messages = ad.gather_rows(proj_src, src) * alpha.reshape(-1, 1)
        aggregated = ad.segment_sum(messages, dst, n_nodes)
        head_outputs.append(ad.elu(aggregated))
    if mode == "concat":
        return ad.concat(head_outputs, axis=1)
    total = head_outputs[0]
    for h in head_outputs[1:]:
        total = total + h
    return total * (1.0 / len(head_outputs))


@dataclass
class GatTape:
    """Recorded forward pass: output tensor plus the leaves it depends on."""

    output: Tensor
    params: GatParams
    table: NodeEmbeddingTable
    token_ids: np.ndarray


@dataclass
class GatGradients:
    layer_grads: list[list[dict[str, np.ndarray]]]  # [layer][head] -> {"w","a"}
    table: np.ndarray
    used_rows: list[int]


def gat_forward_tape(
    g: EvidenceGraph,
    params: GatParams,
    table: NodeEmbeddingTable,
    train: bool = False,
    rng: np.random.Generator | None = None,
    probe: list[float] | None = None,
) -> GatTape:
    """Forward pass returning the output tensor with its tape for backward."""
    x = init_node_embeddings(g, table)
    edges = graph_edge_arrays(g)
    n_layers = len(params.layers)
    for li, layer in enumerate(params.layers):
        mode = "average" if li == n_layers - 1 else "concat"
        x = gat_layer_forward(
            x, edges, layer, mode=mode, train=train, dropout_p=params.dropout if train else 0.0,
            rng=rng, probe=probe,
        )
    token_ids = np.array([n.token_id for n in g.nodes], dtype=np.int64)
    return GatTape(output=x, params=params, table=table, token_ids=token_ids)


def gat_forward(
    g: EvidenceGraph,
    params: GatParams,
    table: NodeEmbeddingTable,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Node embeddings after all layers, in node-index order (n x d)."""
    return gat_forward_tape(g, params, table, train=train, rng=rng).output.data


def gat_backward(tape: GatTape, out_grad: np.ndarray) -> GatGradients:
    """Exact gradients of a scalar loss with the given output gradient.

    Returns gradients for every layer parameter and for the node-embedding
    table (dense matrix plus the list of rows actually used).
    """
    leaves = [t for _, t in tape.params.named_tensors()] + [tape.table.table]
    for leaf in leaves:
        leaf.zero_grad()
    tape.output.backward(out_grad)
    layer_grads = []
    for layer in tape.params.layers:
        heads = []
        for head in layer.heads:
            heads.append(
                {
                    "w": head.w.grad if head.w.grad is not None else np.zeros_like(head.w.data),
                    "a": head.a.grad if head.a.grad is not None else np.zeros_like(head.a.data),
                }
            )
        layer_grads.append(heads)
    table_grad = tape.table.table.grad
    if table_grad is None:
        table_grad = np.zeros_like(tape.table.table.data)
    used = sorted(set(int(t) for t in tape.token_ids))
    return GatGradients(layer_grads=layer_grads, table=table_grad, used_rows=used)
