"""Toy decoder-only language model with composite-embedding injection.

The model receives input *embeddings*, never token ids: graph node rows are
spliced between the embedded prompt prefix and suffix, bypassing the token
embedding lookup entirely.  Rotary position encodings are applied to q/k
inside attention so injected rows need no positional preprocessing.  All base
weights stay frozen during training; low-rank adapters on the query, key and
value projections are the only trainable language-model parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidInputError, InvalidStateError
from .graph import Vocab, tokenize

__all__ = [
    "PromptTemplate",
    "DEFAULT_PREFIX",
    "DEFAULT_SUFFIX_SKELETON",
    "render_history",
    "build_prompt",
    "render_text_prompt",
    "load_prompt_config",
    "LoraAdapter",
    "init_lora",
    "lora_apply",
    "LmLayerParams",
    "ToyLmParams",
    "init_lm_params",
    "embed_tokens",
    "AssembledInput",
    "assemble_embeddings",
    "lm_forward",
    "generate",
]

DEFAULT_PREFIX = "[INST]\nYou are a helpful assistant. Using the following facts:\n"
DEFAULT_SUFFIX_SKELETON = (
    "Answer the following conversational query as a simple key fact without description:\n"
    "[/INST]\n{history}"
)
DEFAULT_EVIDENCE_SKELETON = "<evidence>{evidence}</evidence>"


@dataclass(frozen=True)
class PromptTemplate:
    """Concrete instruction prefix and conversational-query suffix for one turn."""

    prefix: str
    suffix: str

    def __post_init__(self):
        if "Using the following facts" not in self.prefix:
            raise InvalidInputError("prompt prefix must carry the facts instruction")
        if not self.suffix.rstrip().endswith("Answer:"):
            raise InvalidInputError("prompt suffix must end with an unanswered 'Answer:' slot")


def render_history(history: list[tuple[str, str]], question: str) -> str:
    lines = []
    for q, a in history:
        lines.append(f"Question: {q}")
        lines.append(f"Answer: {a}")
    lines.append(f"Question: {question}")
    lines.append("Answer:")
    return "\n".join(lines)


def build_prompt(
    history: list[tuple[str, str]],
    question: str,
    prefix: str = DEFAULT_PREFIX,
    suffix_skeleton: str = DEFAULT_SUFFIX_SKELETON,
) -> PromptTemplate:
    suffix = suffix_skeleton.format(history=render_history(history, question))
    return PromptTemplate(prefix=prefix, suffix=suffix)


def render_text_prompt(
    evidence_texts: list[str],
    history: list[tuple[str, str]],
    question: str,
    prefix: str = DEFAULT_PREFIX,
    suffix_skeleton: str = DEFAULT_SUFFIX_SKELETON,
    evidence_skeleton: str = DEFAULT_EVIDENCE_SKELETON,
) -> str:
    """The no-graph prompt variant: evidence inlined as tagged text lines."""
    block = "\n".join(evidence_skeleton.format(evidence=t) for t in evidence_texts)
    suffix = suffix_skeleton.format(history=render_history(history, question))
    return f"{prefix}{block}\n{suffix}"


def load_prompt_config(path) -> dict[str, str]:
    """Prompt skeletons from a key=value file; escaped newlines are unescaped."""
    out = {
        "prefix": DEFAULT_PREFIX,
        "suffix": DEFAULT_SUFFIX_SKELETON,
        "evidence": DEFAULT_EVIDENCE_SKELETON,
    }
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, value = line.split("=", 1)
            out[key.strip()] = value.replace("\\n", "\n")
    return out


# ---------------------------------------------------------------------------
# LoRA
# ---------------------------------------------------------------------------


@dataclass
class LoraAdapter:
    """Low-rank update W + (alpha/r) B A; B starts at zero so init is a no-op."""

    a: Tensor  # (r, d_in)
    b: Tensor  # (d_out, r)
    rank: int
    alpha: float = 32.0
    dropout: float = 0.05


def init_lora(
    rng: np.random.Generator,
    d_out: int,
    d_in: int,
    rank: int = 4,
    alpha: float = 32.0,
    dropout: float = 0.05,
) -> LoraAdapter:
    a = ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(rank, d_in)))
    b = ad.parameter(np.zeros((d_out, rank)))
    return LoraAdapter(a=a, b=b, rank=rank, alpha=alpha, dropout=dropout)


def lora_apply(
    base: Tensor,
    adapter: LoraAdapter | None,
    inputs: Tensor,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """base @ inputs + (alpha/r) B (A inputs), columns as samples.

    Dropout acts on the adapter path only, and only while training.
    """
    out = base @ inputs
    if adapter is None:
        return out
    adapted = inputs
    if train and adapter.dropout > 0.0:
        if rng is None:
            raise InvalidInputError("adapter dropout requires a generator while training")
        adapted = ad.dropout(adapted, adapter.dropout, rng, training=True)
    scale = adapter.alpha / adapter.rank
    return out + (adapter.b @ (adapter.a @ adapted)) * scale


# ---------------------------------------------------------------------------
# Model parameters
# ---------------------------------------------------------------------------


@dataclass
class LmLayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class ToyLmParams:
    """Frozen desk-scale decoder: pre-norm blocks, rotary q/k, tied output head."""

    tok_emb: Tensor
    layers: list[LmLayerParams]
    lnf_g: Tensor
    lnf_b: Tensor
    w_out: Tensor | None  # None = tied to tok_emb
    d_model: int
    n_heads: int

    @property
    def vocab_size(self) -> int:
        return self.tok_emb.data.shape[0]

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("lm.tok_emb", self.tok_emb)]
        for li, layer in enumerate(self.layers):
            for name in ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2",
                         "ln1_g", "ln1_b", "ln2_g", "ln2_b"):
                out.append((f"lm.layer{li}.{name}", getattr(layer, name)))
        out.append(("lm.lnf_g", self.lnf_g))
        out.append(("lm.lnf_b", self.lnf_b))
        if self.w_out is not None:
            out.append(("lm.w_out", self.w_out))
        return out


def init_lm_params(
    rng: np.random.Generator,
    vocab_size: int,
    d_model: int = 64,
    n_layers: int = 2,
    n_heads: int = 2,
    ffn_mult: int = 4,
    tied_output: bool = True,
    emb_scale: float = 0.25,
) -> ToyLmParams:
    """Random frozen weights; ``emb_scale`` sets the token-embedding std.

    With a tied head behind the final layer norm, the achievable logit range
    is bounded by |h| * emb_scale * sqrt(d), so the scale must be large enough
    for confident predictions to exist at all.
    """
    if d_model % n_heads != 0:
        raise InvalidInputError(f"d_model {d_model} not divisible by {n_heads} heads")
    if (d_model // n_heads) % 2 != 0:
        raise InvalidInputError("head dimension must be even for rotary encoding")

    def mat(rows, cols, scale=None):
        s = scale if scale is not None else 1.0 / np.sqrt(cols)
        return Tensor(rng.normal(0.0, s, size=(rows, cols)))

    d_ff = ffn_mult * d_model
    layers = []
    for _ in range(n_layers):
        layers.append(
            LmLayerParams(
                wq=mat(d_model, d_model),
                wk=mat(d_model, d_model),
                wv=mat(d_model, d_model),
                wo=mat(d_model, d_model),
                w1=mat(d_ff, d_model),
                b1=Tensor(np.zeros(d_ff)),
                w2=mat(d_model, d_ff),
                b2=Tensor(np.zeros(d_model)),
                ln1_g=Tensor(np.ones(d_model)),
                ln1_b=Tensor(np.zeros(d_model)),
                ln2_g=Tensor(np.ones(d_model)),
                ln2_b=Tensor(np.zeros(d_model)),
            )
        )
    return ToyLmParams(
        tok_emb=Tensor(rng.normal(0.0, emb_scale, size=(vocab_size, d_model))),
        layers=layers,
        lnf_g=Tensor(np.ones(d_model)),
        lnf_b=Tensor(np.zeros(d_model)),
        w_out=None if tied_output else mat(vocab_size, d_model),
        d_model=d_model,
        n_heads=n_heads,
    )


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


def embed_tokens(text: str, vocab: Vocab, params: ToyLmParams) -> np.ndarray:
    """Embed(Tok(text)): tokenize, then look rows up in the frozen table."""
    ids = [tid for tid, _ in tokenize(text, vocab)]
    if not ids:
        return np.zeros((0, params.d_model))
    return params.tok_emb.data[np.array(ids, dtype=np.int64)]


def _embed_ids(ids: list[int], params: ToyLmParams) -> Tensor:
    if not ids:
        return Tensor(np.zeros((0, params.d_model)))
    return ad.gather_rows(params.tok_emb, np.array(ids, dtype=np.int64))


@dataclass
class AssembledInput:
    """Composite input rows plus the boundaries needed for masking and decoding."""

    h: Tensor
    prefix_len: int
    graph_len: int
    suffix_len: int
    prefix_ids: list[int] = field(default_factory=list)
    suffix_ids: list[int] = field(default_factory=list)

    @property
    def total_len(self) -> int:
        return self.h.data.shape[0]

    @property
    def boundaries(self) -> tuple[int, int]:
        return (self.prefix_len, self.prefix_len + self.graph_len)


def assemble_embeddings(
    prefix: str,
    h_g: Tensor | np.ndarray,
    suffix: str,
    params: ToyLmParams,
    vocab: Vocab,
) -> AssembledInput:
    """H = H_prefix (+) H_g (+) H_suffix, with boundary indices recorded."""
    h_g = ad.as_tensor(h_g)
    if h_g.data.ndim != 2 or (h_g.data.size and h_g.data.shape[1] != params.d_model):
        raise InvalidStateError(
            f"graph embeddings must be (n, {params.d_model}), got {h_g.data.shape}"
        )
    if h_g.data.size == 0:
        h_g = Tensor(np.zeros((0, params.d_model)))
    prefix_ids = [tid for tid, _ in tokenize(prefix, vocab)]
    suffix_ids = [tid for tid, _ in tokenize(suffix, vocab)]
    h = ad.concat([_embed_ids(prefix_ids, params), h_g, _embed_ids(suffix_ids, params)], axis=0)
    return AssembledInput(
        h=h,
        prefix_len=len(prefix_ids),
        graph_len=h_g.data.shape[0],
        suffix_len=len(suffix_ids),
        prefix_ids=prefix_ids,
        suffix_ids=suffix_ids,
    )


def _rotary_tables(seq_len: int, d_head: int) -> tuple[np.ndarray, np.ndarray]:
    half = d_head // 2
    freqs = 1.0 / (10000.0 ** (np.arange(half) / half))
    angles = np.arange(seq_len)[:, None] * freqs[None, :]
    return np.cos(angles), np.sin(angles)


def _apply_rotary(t: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate feature pairs (half-split layout) of a (heads, seq, d_head) tensor."""
    half = t.data.shape[-1] // 2
    first = ad.narrow(t, 2, 0, half)
    second = ad.narrow(t, 2, half, half)
    rot_first = first * cos - second * sin
    rot_second = first * sin + second * cos
    return ad.concat([rot_first, rot_second], axis=2)


def _project(x: Tensor, w: Tensor, adapter: LoraAdapter | None, train, rng) -> Tensor:
    return lora_apply(w, adapter, x.T, train=train, rng=rng).T


def _attention_block(
    x: Tensor,
    layer: LmLayerParams,
    adapters: dict[str, LoraAdapter],
    n_heads: int,
    train: bool,
    rng: np.random.Generator | None,
) -> Tensor:
    seq_len, d_model = x.data.shape
    d_head = d_model // n_heads
    q = _project(x, layer.wq, adapters.get("q"), train, rng)
    k = _project(x, layer.wk, adapters.get("k"), train, rng)
    v = _project(x, layer.wv, adapters.get("v"), train, rng)

    def split(t: Tensor) -> Tensor:
        return t.reshape(seq_len, n_heads, d_head).transpose(1, 0, 2)

    q, k, v = split(q), split(k), split(v)
    cos, sin = _rotary_tables(seq_len, d_head)
    q = _apply_rotary(q, cos, sin)
    k = _apply_rotary(k, cos, sin)

    scores = (q @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(d_head))
    causal = np.triu(np.full((seq_len, seq_len), -1e9), k=1)  # exact zeros after exp
    att = ad.softmax_last(scores + causal)
    ctx = (att @ v).transpose(1, 0, 2).reshape(seq_len, d_model)
    return _project(ctx, layer.wo, None, train, rng)


def _lm_hidden(
    h: Tensor,
    params: ToyLmParams,
    adapters: dict[tuple[int, str], LoraAdapter],
    train: bool,
    rng: np.random.Generator | None,
) -> Tensor:
    x = h
    for li, layer in enumerate(params.layers):
        layer_adapters = {
            proj: adapters[(li, proj)] for proj in ("q", "k", "v") if (li, proj) in adapters
        }
        normed = ad.layer_norm(x, layer.ln1_g, layer.ln1_b)
        x = x + _attention_block(normed, layer, layer_adapters, params.n_heads, train, rng)
        normed2 = ad.layer_norm(x, layer.ln2_g, layer.ln2_b)
        ff = ad.gelu(normed2 @ layer.w1.T + layer.b1) @ layer.w2.T + layer.b2
        x = x + ff
    return ad.layer_norm(x, params.lnf_g, params.lnf_b)


def _logits(hidden: Tensor, params: ToyLmParams) -> Tensor:
    head = params.tok_emb if params.w_out is None else params.w_out
    return hidden @ head.T


def lm_forward(
    h: Tensor | np.ndarray,
    target_ids: np.ndarray,
    completion_mask: np.ndarray,
    params: ToyLmParams,
    adapters: dict[tuple[int, str], LoraAdapter] | None = None,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Causal forward over injected embeddings; loss over completion tokens only.

    ``target_ids[i]`` is the token expected after position i; positions with
    ``completion_mask[i]`` false contribute exactly zero loss (their targets
    are never read).  The loss is the mean cross-entropy over masked positions.
    """
    h = ad.as_tensor(h)
    adapters = adapters or {}
    seq_len = h.data.shape[0]
    target_ids = np.asarray(target_ids, dtype=np.int64)
    completion_mask = np.asarray(completion_mask, dtype=bool)
    if target_ids.shape[0] != seq_len - 1 or completion_mask.shape[0] != seq_len - 1:
        raise InvalidInputError(
            f"need {seq_len - 1} targets/mask flags for {seq_len} input rows"
        )
    positions = np.flatnonzero(completion_mask)
    if positions.size == 0:
        raise InvalidInputError("completion mask selects no positions; loss undefined")

    hidden = _lm_hidden(h, params, adapters, train, rng)
    logits = _logits(hidden, params)
    selected = ad.gather_rows(logits, positions)
    log_probs = ad.log_softmax_last(selected)
    gold = ad.gather_elements(log_probs, target_ids[positions])
    loss = -gold.sum() * (1.0 / positions.size)
    return logits, loss


def generate(
    h: np.ndarray | Tensor,
    params: ToyLmParams,
    adapters: dict[tuple[int, str], LoraAdapter] | None = None,
    vocab: Vocab | None = None,
    max_tokens: int = 32,
) -> str:
    """Greedy decoding from the end of H; stops at eos or the token budget."""
    if vocab is None:
        raise InvalidInputError("generation requires the vocabulary")
    data = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64)
    if data.shape[0] == 0:
        raise InvalidInputError("cannot generate from an empty input")
    adapters = adapters or {}
    surfaces: list[str] = []
    current = data
    for _ in range(max_tokens):
        hidden = _lm_hidden(Tensor(current), params, adapters, train=False, rng=None)
        logits = _logits(hidden, params).data[-1]
        next_id = int(np.argmax(logits))
        if next_id == vocab.eos_id:
            break
        surfaces.append(vocab.tokens[next_id])
        current = np.concatenate([current, params.tok_emb.data[next_id][None, :]], axis=0)
    return vocab.detokenize(surfaces)
