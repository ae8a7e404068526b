"""Answer normalization, hit metrics and stratified reports.

Generated answers are matched to their canonical form among the entities of
the turn's evidence set: an exact (case-insensitive, trimmed) label or alias
match wins outright, otherwise candidates rank by Levenshtein distance.
H@1 asks whether the top candidate matches the gold answer, H@5 whether any
of the top five does.
"""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import InvalidInputError
from .evidence import EntityRef, SourceKind

__all__ = [
    "levenshtein",
    "normalize_answer",
    "EvalRecord",
    "score_turn",
    "classify_answer_type",
    "MetricsReport",
    "stratify",
    "read_eval_records",
    "write_eval_records",
    "write_metrics_report",
]


def _fold(text: str) -> str:
    return text.strip().casefold()


def levenshtein(a: str, b: str) -> int:
    """Edit distance (unit insert/delete/substitute) over case-folded, trimmed text."""
    a, b = _fold(a), _fold(b)
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


def normalize_answer(generated: str, candidates: list[EntityRef], topk: int = 5) -> list[str]:
    """Rank candidate entity labels by closeness to the generated answer.

    An exact label/alias match ranks first; the rest sort by ascending edit
    distance with ties broken by label.  Without candidates the generated
    string passes through untouched.
    """
    if topk < 1:
        raise InvalidInputError(f"topk must be >= 1, got {topk}")
    if not candidates:
        return [generated]
    gen = _fold(generated)
    exact: list[tuple[str, str]] = []  # (label, entity_id)
    rest: list[tuple[int, str, str]] = []
    seen: set[str] = set()
    for ent in candidates:
        if ent.entity_id in seen:
            continue
        seen.add(ent.entity_id)
        surfaces = (ent.label, *ent.aliases)
        if any(_fold(s) == gen for s in surfaces):
            exact.append((ent.label, ent.entity_id))
        else:
            rest.append((levenshtein(generated, ent.label), ent.label, ent.entity_id))
    exact.sort()
    rest.sort()
    ordered = [label for label, _ in exact] + [label for _, label, _ in rest]
    return ordered[:topk]


@dataclass(frozen=True)
class EvalRecord:
    conv_id: str
    turn: int
    domain: str
    answer_source: SourceKind | None
    generated: str
    normalized: str
    gold: str
    gold_aliases: tuple[str, ...] = ()
    hit1: bool = False
    hit5: bool = False
    answer_type: str = "String"

    def __post_init__(self):
        if self.hit1 and not self.hit5:
            raise InvalidInputError("hit1 implies hit5")


def _matches_gold(candidate: str, gold: str, aliases: tuple[str, ...]) -> bool:
    cand = _fold(candidate)
    return cand == _fold(gold) or any(cand == _fold(alias) for alias in aliases)


def score_turn(
    conv_id: str,
    turn: int,
    domain: str,
    answer_source: SourceKind | None,
    generated: str,
    candidates: list[EntityRef],
    gold: str,
    gold_aliases: tuple[str, ...] = (),
) -> EvalRecord:
    ranked = normalize_answer(generated, candidates, topk=5)
    hit1 = bool(ranked) and _matches_gold(ranked[0], gold, gold_aliases)
    hit5 = any(_matches_gold(c, gold, gold_aliases) for c in ranked)
    return EvalRecord(
        conv_id=conv_id,
        turn=turn,
        domain=domain,
        answer_source=answer_source,
        generated=generated,
        normalized=ranked[0] if ranked else generated,
        gold=gold,
        gold_aliases=tuple(gold_aliases),
        hit1=hit1,
        hit5=hit1 or hit5,
        answer_type=classify_answer_type(gold),
    )


_MONTHS = (
    "january|february|march|april|may|june|july|august|september|october|november|december"
)
_DATE_PATTERNS = (
    re.compile(rf"^\d{{1,2}} ({_MONTHS}) \d{{4}}$", re.IGNORECASE),
    re.compile(rf"^({_MONTHS}) \d{{1,2}}, \d{{4}}$", re.IGNORECASE),
    re.compile(r"^\d{4}-\d{2}-\d{2}$"),
    re.compile(r"^\d{1,2}/\d{1,2}/\d{4}$"),
    re.compile(r"^\d{4}$"),  # bare year
)
_NUMBER_PATTERN = re.compile(r"^[+-]?(\d{1,3}(,\d{3})+|\d+)(\.\d+)?$")


def classify_answer_type(answer: str) -> str:
    """Date for the supported closed date formats, Number for numerics, else String."""
    text = answer.strip()
    if any(p.match(text) for p in _DATE_PATTERNS):
        return "Date"
    if _NUMBER_PATTERN.match(text):
        return "Number"
    return "String"


@dataclass(frozen=True)
class MetricsReport:
    overall_hit1: float
    overall_hit5: float
    count: int
    by_domain: dict[str, dict[str, float]]
    by_source: dict[str, dict[str, float]]
    by_turn: dict[str, dict[str, float]]
    by_answer_type: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {
            "overall": {"hit1": self.overall_hit1, "hit5": self.overall_hit5, "count": self.count},
            "by_domain": self.by_domain,
            "by_source": self.by_source,
            "by_turn": self.by_turn,
            "by_answer_type": self.by_answer_type,
        }


def _bucket(records: list[EvalRecord], key) -> dict[str, dict[str, float]]:
    groups: dict[str, list[EvalRecord]] = defaultdict(list)
    for rec in records:
        groups[key(rec)].append(rec)
    out = {}
    for name in sorted(groups):
        recs = groups[name]
        out[name] = {
            "hit1": sum(r.hit1 for r in recs) / len(recs),
            "hit5": sum(r.hit5 for r in recs) / len(recs),
            "count": len(recs),
        }
    return out


def stratify(records: list[EvalRecord]) -> MetricsReport:
    """Mean H@1/H@5 per domain, answer source, turn position and answer type."""
    n = len(records)
    return MetricsReport(
        overall_hit1=sum(r.hit1 for r in records) / n if n else 0.0,
        overall_hit5=sum(r.hit5 for r in records) / n if n else 0.0,
        count=n,
        by_domain=_bucket(records, lambda r: r.domain or "unknown"),
        by_source=_bucket(
            records, lambda r: r.answer_source.value if r.answer_source else "unknown"
        ),
        by_turn=_bucket(records, lambda r: str(r.turn)),
        by_answer_type=_bucket(records, lambda r: r.answer_type),
    )


# ---------------------------------------------------------------------------
# Record and report files
# ---------------------------------------------------------------------------


def record_to_dict(rec: EvalRecord) -> dict:
    return {
        "conv_id": rec.conv_id,
        "turn": rec.turn,
        "domain": rec.domain,
        "answer_source": rec.answer_source.value if rec.answer_source else None,
        "generated": rec.generated,
        "normalized": rec.normalized,
        "gold": rec.gold,
        "gold_aliases": list(rec.gold_aliases),
        "hit1": rec.hit1,
        "hit5": rec.hit5,
        "answer_type": rec.answer_type,
    }


def record_from_dict(obj: dict) -> EvalRecord:
    source = obj.get("answer_source")
    return EvalRecord(
        conv_id=obj["conv_id"],
        turn=int(obj["turn"]),
        domain=obj.get("domain", ""),
        answer_source=SourceKind(source) if source else None,
        generated=obj.get("generated", ""),
        normalized=obj.get("normalized", ""),
        gold=obj.get("gold", ""),
        gold_aliases=tuple(obj.get("gold_aliases", ())),
        hit1=bool(obj["hit1"]),
        hit5=bool(obj["hit5"]),
        answer_type=obj.get("answer_type", "String"),
    )


def read_eval_records(path: str | Path) -> list[EvalRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(record_from_dict(json.loads(line)))
    return out


def write_eval_records(records: Iterable[EvalRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), sort_keys=True) + "\n")


def write_metrics_report(report: MetricsReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
