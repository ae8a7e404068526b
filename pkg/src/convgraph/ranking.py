"""BM25 evidence ranking and pluggable re-rank scoring.

Pools are small (at most a few thousand instances per turn), so statistics
are rebuilt per pool and there is no persistent inverted index.  All
orderings break ties by ascending evidence id so parallel scoring schedules
cannot change the output.
"""

from __future__ import annotations

import inspect
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import json

from .errors import InvalidInputError, InvalidStateError, MissingEmbeddingError
from .evidence import ConversationQuery, Evidence

logger = logging.getLogger(__name__)

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_TOP_K = 50

__all__ = [
    "tokenize_for_ranking",
    "CorpusStats",
    "build_corpus_stats",
    "bm25_score",
    "RankedEvidence",
    "rank_evidence",
    "RerankScorer",
    "TfidfCosineScorer",
    "EmbeddingCosineScorer",
    "rerank",
]

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize_for_ranking(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation; no stemming or stopwords."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class CorpusStats:
    doc_count: int
    avg_doc_len: float
    doc_freq: dict[str, int] = field(default_factory=dict)


def build_corpus_stats(pool: list[Evidence]) -> CorpusStats:
    """Document statistics over the lowercased word tokens of ``linearized``."""
    doc_freq: Counter[str] = Counter()
    total_len = 0
    for ev in pool:
        tokens = tokenize_for_ranking(ev.linearized)
        total_len += len(tokens)
        doc_freq.update(set(tokens))
    n = len(pool)
    return CorpusStats(
        doc_count=n,
        avg_doc_len=total_len / n if n else 0.0,
        doc_freq=dict(doc_freq),
    )


def bm25_score(
    query: ConversationQuery,
    ev: Evidence,
    stats: CorpusStats,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> float:
    """Okapi BM25 of one instance against the query, summed over unique query terms.

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)), saturation with k1 and
    length normalization with b.
    """
    if stats.doc_count < 1:
        raise InvalidStateError("cannot score against an empty corpus")
    doc_tokens = tokenize_for_ranking(ev.linearized)
    if not doc_tokens:
        return 0.0
    tf = Counter(doc_tokens)
    n = stats.doc_count
    if stats.avg_doc_len > 0:
        norm_len = len(doc_tokens) / stats.avg_doc_len
    else:
        norm_len = 0.0
    score = 0.0
    for term in set(tokenize_for_ranking(query.text)):
        f = tf.get(term, 0)
        if f == 0:
            continue
        df = stats.doc_freq.get(term, 0)
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        score += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * norm_len))
    return score


@dataclass(frozen=True)
class RankedEvidence:
    evidence: Evidence
    score: float
    rank: int


def _sorted_ranking(scored: list[tuple[Evidence, float]]) -> list[RankedEvidence]:
    scored.sort(key=lambda pair: (-pair[1], pair[0].evidence_id))
    return [RankedEvidence(ev, s, rank) for rank, (ev, s) in enumerate(scored, start=1)]


def rank_evidence(
    query: ConversationQuery,
    pool: list[Evidence],
    k: int,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> list[RankedEvidence]:
    """Top-k instances by BM25, descending; ties by ascending evidence id."""
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    if not pool:
        return []
    stats = build_corpus_stats(pool)
    scored = [(ev, bm25_score(query, ev, stats, k1, b)) for ev in pool]
    return _sorted_ranking(scored)[:k]


# ---------------------------------------------------------------------------
# Re-rank scorers
# ---------------------------------------------------------------------------


class RerankScorer(Protocol):
    def score(self, query_text: str, evidence_text: str, *, evidence_id: str | None = None) -> float:
        """Similarity of one evidence text to the query; must be finite."""
        ...


class TfidfCosineScorer:
    """Cosine over tf-idf vectors; falls back to plain tf when unfitted.

    idf uses ln(1 + N/(1+df)), which keeps all weights positive so the
    cosine stays in [0, 1].
    """

    def __init__(self, corpus_texts: list[str] | None = None):
        self._idf: dict[str, float] = {}
        if corpus_texts:
            self.fit(corpus_texts)

    def fit(self, corpus_texts: list[str]) -> "TfidfCosineScorer":
        df: Counter[str] = Counter()
        for text in corpus_texts:
            df.update(set(tokenize_for_ranking(text)))
        n = len(corpus_texts)
        self._idf = {t: math.log(1.0 + n / (1.0 + d)) for t, d in df.items()}
        return self

    def _vector(self, text: str) -> dict[str, float]:
        tf = Counter(tokenize_for_ranking(text))
        return {t: c * self._idf.get(t, 1.0) for t, c in tf.items()}

    def score(self, query_text: str, evidence_text: str, *, evidence_id: str | None = None) -> float:
        va = self._vector(query_text)
        vb = self._vector(evidence_text)
        if not va or not vb:
            return 0.0
        if va == vb:
            return 1.0
        dot = sum(w * vb[t] for t, w in va.items() if t in vb)
        na = math.sqrt(sum(w * w for w in va.values()))
        nb = math.sqrt(sum(w * w for w in vb.values()))
        return min(1.0, max(0.0, dot / (na * nb)))


class EmbeddingCosineScorer:
    """Cosine over precomputed vectors loaded from a JSONL file.

    Each record is ``{"id": ..., "vector": [...]}``; evidence vectors are
    keyed by evidence id and query vectors by the literal query text.
    """

    def __init__(self, path: str | Path):
        self._vectors: dict[str, list[float]] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                self._vectors[obj["id"]] = [float(x) for x in obj["vector"]]

    def _lookup(self, key: str) -> list[float]:
        if key not in self._vectors:
            raise MissingEmbeddingError(key)
        return self._vectors[key]

    def score(self, query_text: str, evidence_text: str, *, evidence_id: str | None = None) -> float:
        va = self._lookup(query_text)
        vb = self._lookup(evidence_id if evidence_id is not None else evidence_text)
        dot = sum(a * b for a, b in zip(va, vb))
        na = math.sqrt(sum(a * a for a in va))
        nb = math.sqrt(sum(b * b for b in vb))
        if na == 0.0 or nb == 0.0:
            return 0.0
        return dot / (na * nb)


def rerank(
    query: ConversationQuery,
    pool: list[Evidence],
    scorer: RerankScorer,
) -> list[RankedEvidence]:
    """Full descending ordering of the pool under the scorer.

    A failing scorer (e.g. missing embedding vector) demotes the item to the
    bottom with a -inf sentinel and logs the failure; ranking still completes.
    """
    params = inspect.signature(scorer.score).parameters
    pass_id = "evidence_id" in params or any(
        p.kind is inspect.Parameter.VAR_KEYWORD for p in params.values()
    )
    scored: list[tuple[Evidence, float]] = []
    for ev in pool:
        try:
            if pass_id:
                s = scorer.score(query.text, ev.linearized, evidence_id=ev.evidence_id)
            else:
                s = scorer.score(query.text, ev.linearized)
        except Exception as exc:
            logger.warning(
                "rerank scorer failed for evidence %s: %s; assigning -inf", ev.evidence_id, exc
            )
            s = float("-inf")
        scored.append((ev, s))
    return _sorted_ranking(scored)
