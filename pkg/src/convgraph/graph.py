"""Token-chain evidence graphs with entity links.

Each linearized instance becomes a linear chain of token nodes; spans that
string-match a known entity are annotated, and the head tokens of all spans
of one entity are linked pairwise in both directions, joining the local
chains into one global graph.  Self-loops keep the attention softmax defined
for nodes with no other in-edges.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import GraphParseError, InvalidInputError
from .evidence import EntityRef, Evidence, entity_from_dict, entity_to_dict

logger = logging.getLogger(__name__)

RESERVED_TOKENS = ("<pad>", "<unk>", "<eos>")

__all__ = [
    "Vocab",
    "tokenize",
    "GraphNode",
    "EdgeKind",
    "GraphEdge",
    "EvidenceGraph",
    "GraphBuildOptions",
    "match_entities",
    "build_graph",
    "serialize_graph",
    "deserialize_graph",
    "read_entities",
    "write_entities",
]

_TOKEN = re.compile(r"\w+|[^\w\s]")


@dataclass(frozen=True)
class Vocab:
    """Deterministic word-level vocabulary standing in for a base LM tokenizer.

    Ids are 0-based and contiguous; the first three are reserved for
    pad/unk/eos in that order (mirrored by the vocab.txt file layout).
    """

    tokens: tuple[str, ...]
    ids: dict[str, int]
    pad_id: int = 0
    unk_id: int = 1
    eos_id: int = 2

    def __len__(self) -> int:
        return len(self.tokens)

    @staticmethod
    def from_tokens(body: Iterable[str]) -> "Vocab":
        tokens = list(RESERVED_TOKENS)
        seen = set(tokens)
        for tok in body:
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)
        return Vocab(tokens=tuple(tokens), ids={t: i for i, t in enumerate(tokens)})

    @staticmethod
    def from_texts(texts: Iterable[str]) -> "Vocab":
        """Build a vocabulary from a corpus; body tokens sorted for canonical ids."""
        body: set[str] = set()
        for text in texts:
            body.update(surface for _, surface in _split_surfaces(text))
        return Vocab.from_tokens(sorted(body))

    @staticmethod
    def from_file(path: str | Path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if tuple(tokens[:3]) != RESERVED_TOKENS:
            raise InvalidInputError(
                f"vocab file must start with reserved tokens {RESERVED_TOKENS}, got {tokens[:3]}"
            )
        return Vocab(tokens=tuple(tokens), ids={t: i for i, t in enumerate(tokens)})

    def to_file(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    def detokenize(self, surfaces: Iterable[str]) -> str:
        text = " ".join(surfaces)
        return re.sub(r"\s+([^\w\s])", r"\1", text).strip()


def _split_surfaces(text: str) -> list[tuple[int, str]]:
    return [(m.start(), m.group()) for m in _TOKEN.finditer(text.lower())]


def tokenize(text: str, vocab: Vocab) -> list[tuple[int, str]]:
    """Lowercase word/punctuation tokens as (vocab id, surface); OOV maps to unk."""
    out = []
    for _, surface in _split_surfaces(text):
        out.append((vocab.ids.get(surface, vocab.unk_id), surface))
    return out


@dataclass(frozen=True)
class GraphNode:
    node_idx: int
    token_id: int
    surface: str
    evidence_id: str
    pos: int
    entity_id: str | None = None


class EdgeKind(str, Enum):
    CHAIN = "chain"
    ENTITY_LINK = "entity_link"
    SELF_LOOP = "self_loop"


@dataclass(frozen=True)
class GraphEdge:
    src: int
    dst: int
    kind: EdgeKind


@dataclass(frozen=True)
class EvidenceGraph:
    """Directed token graph for one turn; edges kept in canonical order."""

    nodes: tuple[GraphNode, ...]
    edges: tuple[GraphEdge, ...]
    turn: int = 1

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(
            self,
            "edges",
            tuple(sorted(self.edges, key=lambda e: (e.src, e.dst, e.kind.value))),
        )

    def edge_counts(self) -> dict[EdgeKind, int]:
        counts = {kind: 0 for kind in EdgeKind}
        for edge in self.edges:
            counts[edge.kind] += 1
        return counts


@dataclass(frozen=True)
class GraphBuildOptions:
    add_reverse_chain: bool = False
    link_span_tokens: str = "head"  # "head" | "all"
    collapse_entity_spans: bool = False

    def __post_init__(self):
        if self.link_span_tokens not in ("head", "all"):
            raise InvalidInputError(f"link_span_tokens must be head|all, got {self.link_span_tokens}")


def _phrase_table(lexicon: list[EntityRef]) -> dict[tuple[str, ...], str]:
    """Token-tuple -> entity id; phrase collisions resolve to the smallest id."""
    table: dict[tuple[str, ...], str] = {}
    for ent in lexicon:
        for surface in (ent.label, *ent.aliases):
            phrase = tuple(s for _, s in _split_surfaces(surface))
            if not phrase:
                continue
            prior = table.get(phrase)
            if prior is None or ent.entity_id < prior:
                table[phrase] = ent.entity_id
    return table


def match_entities(
    tokens: list[str], lexicon: list[EntityRef]
) -> list[tuple[int, int, str]]:
    """Greedy left-to-right longest-match spans as (start, end, entity_id).

    ``end`` is exclusive; matches are case-insensitive (tokens and lexicon
    phrases share the lowercasing tokenizer) and never overlap.
    """
    table = _phrase_table(lexicon)
    if not table:
        return []
    max_len = max(len(p) for p in table)
    spans: list[tuple[int, int, str]] = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = False
        for length in range(min(max_len, n - i), 0, -1):
            phrase = tuple(tokens[i : i + length])
            entity_id = table.get(phrase)
            if entity_id is not None:
                spans.append((i, i + length, entity_id))
                i += length
                matched = True
                break
        if not matched:
            i += 1
    return spans


def build_graph(
    instances: list[Evidence],
    lexicon: list[EntityRef],
    vocab: Vocab,
    turn: int = 1,
    options: GraphBuildOptions | None = None,
) -> EvidenceGraph:
    """Chain every instance's tokens, annotate entity spans, link spans globally.

    Instances that tokenize to nothing are skipped with a logged warning.
    Entity links form a complete digraph over the anchor tokens (span heads by
    default) of each entity's spans.
    """
    opts = options or GraphBuildOptions()
    nodes: list[GraphNode] = []
    edges: list[GraphEdge] = []
    anchors_by_entity: dict[str, list[list[int]]] = {}

    for ev in instances:
        if not ev.linearized:
            raise InvalidInputError(f"evidence {ev.evidence_id} has not been linearized")
        toks = tokenize(ev.linearized, vocab)
        if not toks:
            logger.warning("evidence %s tokenized to nothing; skipped", ev.evidence_id)
            continue
        surfaces = [s for _, s in toks]
        spans = match_entities(surfaces, lexicon)
        entity_at = {}
        for start, end, entity_id in spans:
            for pos in range(start, end):
                entity_at[pos] = entity_id

        if opts.collapse_entity_spans and spans:
            toks, entity_at, spans = _collapse_spans(toks, spans)

        base = len(nodes)
        for pos, (token_id, surface) in enumerate(toks):
            nodes.append(
                GraphNode(
                    node_idx=base + pos,
                    token_id=token_id,
                    surface=surface,
                    evidence_id=ev.evidence_id,
                    pos=pos,
                    entity_id=entity_at.get(pos),
                )
            )
        for pos in range(len(toks) - 1):
            edges.append(GraphEdge(base + pos, base + pos + 1, EdgeKind.CHAIN))
            if opts.add_reverse_chain:
                edges.append(GraphEdge(base + pos + 1, base + pos, EdgeKind.CHAIN))
        for pos in range(len(toks)):
            edges.append(GraphEdge(base + pos, base + pos, EdgeKind.SELF_LOOP))
        for start, end, entity_id in spans:
            if opts.link_span_tokens == "all":
                anchor = [base + p for p in range(start, end)]
            else:
                anchor = [base + start]
            anchors_by_entity.setdefault(entity_id, []).append(anchor)

    for entity_id in sorted(anchors_by_entity):
        span_anchors = anchors_by_entity[entity_id]
        for i, anchors_a in enumerate(span_anchors):
            for j, anchors_b in enumerate(span_anchors):
                if i == j:
                    continue
                for a in anchors_a:
                    for b in anchors_b:
                        edges.append(GraphEdge(a, b, EdgeKind.ENTITY_LINK))

    return EvidenceGraph(nodes=tuple(nodes), edges=tuple(edges), turn=turn)


def _collapse_spans(toks, spans):
    """Contract each matched span to a single node carrying the joined surface."""
    new_toks: list[tuple[int, str]] = []
    new_entity_at: dict[int, str] = {}
    new_spans: list[tuple[int, int, str]] = []
    by_start = {start: (end, entity_id) for start, end, entity_id in spans}
    pos = 0
    while pos < len(toks):
        if pos in by_start:
            end, entity_id = by_start[pos]
            head_id = toks[pos][0]
            surface = " ".join(s for _, s in toks[pos:end])
            new_idx = len(new_toks)
            new_toks.append((head_id, surface))
            new_entity_at[new_idx] = entity_id
            new_spans.append((new_idx, new_idx + 1, entity_id))
            pos = end
        else:
            new_toks.append(toks[pos])
            pos += 1
    return new_toks, new_entity_at, new_spans


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _node_to_dict(node: GraphNode) -> dict:
    return {
        "node_idx": node.node_idx,
        "token_id": node.token_id,
        "surface": node.surface,
        "evidence_id": node.evidence_id,
        "pos": node.pos,
        "entity_id": node.entity_id,
    }


def serialize_graph(g: EvidenceGraph) -> bytes:
    """Canonical JSON bytes: sorted keys, nodes by index, edges by (src, dst, kind)."""
    obj = {
        "turn": g.turn,
        "nodes": [_node_to_dict(n) for n in sorted(g.nodes, key=lambda n: n.node_idx)],
        "edges": [
            {"src": e.src, "dst": e.dst, "kind": e.kind.value}
            for e in sorted(g.edges, key=lambda e: (e.src, e.dst, e.kind.value))
        ],
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def deserialize_graph(data: bytes) -> EvidenceGraph:
    try:
        obj = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise GraphParseError("graph bytes are not valid UTF-8", offset=exc.start) from exc
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"malformed graph JSON: {exc.msg}", offset=exc.pos) from exc
    try:
        nodes = tuple(
            GraphNode(
                node_idx=int(n["node_idx"]),
                token_id=int(n["token_id"]),
                surface=n["surface"],
                evidence_id=n["evidence_id"],
                pos=int(n["pos"]),
                entity_id=n.get("entity_id"),
            )
            for n in obj["nodes"]
        )
        edges = tuple(
            GraphEdge(src=int(e["src"]), dst=int(e["dst"]), kind=EdgeKind(e["kind"]))
            for e in obj["edges"]
        )
        turn = int(obj["turn"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphParseError(f"graph JSON missing or malformed field: {exc}") from exc
    return EvidenceGraph(nodes=nodes, edges=edges, turn=turn)


def read_entities(path: str | Path) -> list[EntityRef]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(entity_from_dict(json.loads(line)))
    return out


def write_entities(entities: Iterable[EntityRef], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ent in entities:
            fh.write(json.dumps(entity_to_dict(ent), sort_keys=True) + "\n")
