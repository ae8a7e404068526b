"""Domain types for conversations, queries and evidence instances.

Conversations arrive as ``interactions.jsonl`` (one JSON object per
conversation), evidence pools as ``pools.jsonl`` (one JSON object per
conversation turn).  All types are immutable after construction and safe
to share read-only across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import InvalidInputError

__all__ = [
    "SourceKind",
    "Turn",
    "Interaction",
    "EntityRef",
    "Evidence",
    "QueryPart",
    "ConversationQuery",
    "build_query",
    "read_interactions",
    "write_interactions",
    "read_pools",
    "write_pools",
]


class SourceKind(str, Enum):
    """Where a piece of evidence came from; serialized as a lowercase string."""

    KB = "kb"
    TEXT = "text"
    TABLE = "table"
    INFOBOX = "infobox"


def _dedupe_case_insensitive(items: Iterable[str]) -> tuple[str, ...]:
    seen: set[str] = set()
    out: list[str] = []
    for item in items:
        key = item.casefold()
        if key not in seen:
            seen.add(key)
            out.append(item)
    return tuple(out)


@dataclass(frozen=True)
class Turn:
    """One question-answer pair of a conversation."""

    index: int
    question: str
    gold_answer: str
    answer_source: SourceKind | None = None
    domain: str = ""
    gold_aliases: tuple[str, ...] = ()

    def __post_init__(self):
        if self.index < 1:
            raise InvalidInputError(f"turn index must be >= 1, got {self.index}")
        if not self.question:
            raise InvalidInputError("turn question must be non-empty")
        object.__setattr__(self, "gold_aliases", _dedupe_case_insensitive(self.gold_aliases))


@dataclass(frozen=True)
class Interaction:
    """A full conversation: ordered turns with contiguous 1-based indices."""

    conv_id: str
    domain: str
    turns: tuple[Turn, ...]

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        for pos, turn in enumerate(self.turns, start=1):
            if turn.index != pos:
                raise InvalidInputError(
                    f"conversation {self.conv_id}: turn indices must be contiguous from 1, "
                    f"got {turn.index} at position {pos}"
                )


@dataclass(frozen=True)
class EntityRef:
    """A canonical entity with its surface label and aliases."""

    entity_id: str
    label: str
    aliases: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.label:
            raise InvalidInputError("entity label must be non-empty")
        object.__setattr__(self, "aliases", _dedupe_case_insensitive(self.aliases))


@dataclass(frozen=True)
class Evidence:
    """One retrieved instance: a KB triple, sentence, table row or infobox entry.

    ``payload`` keeps the source-specific raw fields; ``linearized`` is filled
    by the linearizer (instances are immutable, so linearization returns a new
    ``Evidence`` via :func:`dataclasses.replace`).
    """

    evidence_id: str
    source_kind: SourceKind
    payload: Mapping[str, Any]
    article_title: str | None = None
    linearized: str = ""
    entities: tuple[EntityRef, ...] = ()
    origin_turn: int = 1

    def __post_init__(self):
        if self.origin_turn < 1:
            raise InvalidInputError(f"origin_turn must be >= 1, got {self.origin_turn}")
        object.__setattr__(self, "entities", tuple(self.entities))

    def with_linearized(self, text: str) -> "Evidence":
        return replace(self, linearized=text)

    def with_origin_turn(self, turn: int) -> "Evidence":
        return replace(self, origin_turn=turn)


@dataclass(frozen=True)
class QueryPart:
    role: str  # "question" | "answer"
    text: str


@dataclass(frozen=True)
class ConversationQuery:
    """The retrieval query at turn t: all previous QA pairs plus the new question."""

    turn: int
    text: str
    parts: tuple[QueryPart, ...]

    def __post_init__(self):
        if not self.parts or self.parts[-1].role != "question":
            raise InvalidInputError("query parts must end with a question part")
        joined = " ".join(p.text for p in self.parts)
        if joined != self.text:
            raise InvalidInputError("query text must equal the join of its parts")


def build_query(history: list[tuple[str, str]], q_t: str) -> ConversationQuery:
    """Interleave previous questions and answers with the current question.

    ``history`` holds (question, answer) pairs for turns 1..t-1; the query text
    is the space-joined concatenation (no role markers: downstream ranking is
    bag-of-words, and prompts carry role structure separately).
    """
    if not q_t:
        raise InvalidInputError("current question must be non-empty")
    parts: list[QueryPart] = []
    for question, answer in history:
        if not question or not answer:
            raise InvalidInputError("history entries must be non-empty")
        parts.append(QueryPart("question", question))
        parts.append(QueryPart("answer", answer))
    parts.append(QueryPart("question", q_t))
    text = " ".join(p.text for p in parts)
    return ConversationQuery(turn=len(history) + 1, text=text, parts=tuple(parts))


# ---------------------------------------------------------------------------
# JSON (de)serialization
# ---------------------------------------------------------------------------


def turn_to_dict(turn: Turn) -> dict:
    out: dict[str, Any] = {"index": turn.index, "question": turn.question, "answer": turn.gold_answer}
    if turn.gold_aliases:
        out["answer_aliases"] = list(turn.gold_aliases)
    if turn.answer_source is not None:
        out["answer_source"] = turn.answer_source.value
    return out


def turn_from_dict(obj: Mapping[str, Any], domain: str = "") -> Turn:
    source = obj.get("answer_source")
    return Turn(
        index=int(obj["index"]),
        question=obj["question"],
        gold_answer=obj.get("answer", ""),
        answer_source=SourceKind(source) if source else None,
        domain=domain,
        gold_aliases=tuple(obj.get("answer_aliases", ())),
    )


def interaction_to_dict(inter: Interaction) -> dict:
    return {
        "conv_id": inter.conv_id,
        "domain": inter.domain,
        "turns": [turn_to_dict(t) for t in inter.turns],
    }


def interaction_from_dict(obj: Mapping[str, Any]) -> Interaction:
    domain = obj.get("domain", "")
    return Interaction(
        conv_id=obj["conv_id"],
        domain=domain,
        turns=tuple(turn_from_dict(t, domain) for t in obj["turns"]),
    )


def entity_to_dict(ent: EntityRef) -> dict:
    return {"id": ent.entity_id, "label": ent.label, "aliases": list(ent.aliases)}


def entity_from_dict(obj: Mapping[str, Any]) -> EntityRef:
    return EntityRef(entity_id=obj["id"], label=obj["label"], aliases=tuple(obj.get("aliases", ())))


def evidence_to_dict(ev: Evidence) -> dict:
    out: dict[str, Any] = {
        "evidence_id": ev.evidence_id,
        "source_kind": ev.source_kind.value,
        "payload": dict(ev.payload),
        "origin_turn": ev.origin_turn,
    }
    if ev.article_title is not None:
        out["article_title"] = ev.article_title
    if ev.linearized:
        out["linearized"] = ev.linearized
    if ev.entities:
        out["entities"] = [entity_to_dict(e) for e in ev.entities]
    return out


def evidence_from_dict(obj: Mapping[str, Any]) -> Evidence:
    return Evidence(
        evidence_id=obj["evidence_id"],
        source_kind=SourceKind(obj["source_kind"]),
        payload=dict(obj["payload"]),
        article_title=obj.get("article_title"),
        linearized=obj.get("linearized", ""),
        entities=tuple(entity_from_dict(e) for e in obj.get("entities", ())),
        origin_turn=int(obj.get("origin_turn", 1)),
    )


def read_interactions(path: str | Path) -> list[Interaction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(interaction_from_dict(json.loads(line)))
    return out


def write_interactions(interactions: Iterable[Interaction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inter in interactions:
            fh.write(json.dumps(interaction_to_dict(inter), sort_keys=True) + "\n")


def read_pools(path: str | Path) -> dict[tuple[str, int], list[Evidence]]:
    """Load per-turn evidence pools keyed by (conv_id, turn)."""
    pools: dict[tuple[str, int], list[Evidence]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            key = (obj["conv_id"], int(obj["turn"]))
            pools[key] = [evidence_from_dict(e) for e in obj["evidence"]]
    return pools


def write_pools(pools: Mapping[tuple[str, int], list[Evidence]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (conv_id, turn) in sorted(pools):
            obj = {
                "conv_id": conv_id,
                "turn": turn,
                "evidence": [evidence_to_dict(e) for e in pools[(conv_id, turn)]],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
