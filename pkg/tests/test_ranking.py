import numpy as np
import pytest

from convgraph.errors import InvalidInputError, InvalidStateError
from convgraph.evidence import Evidence, SourceKind, build_query
from convgraph.ranking import (
    EmbeddingCosineScorer,
    TfidfCosineScorer,
    bm25_score,
    build_corpus_stats,
    rank_evidence,
    rerank,
    tokenize_for_ranking,
)

from oracles import bm25_oracle, cosine_oracle


def _ev(evidence_id, text):
    return Evidence(
        evidence_id=evidence_id,
        source_kind=SourceKind.TEXT,
        payload={"sentence": text},
        linearized=text,
    )


def test_corpus_stats_by_hand():
    stats = build_corpus_stats([_ev("a", "a b"), _ev("b", "a")])
    assert stats.doc_count == 2
    assert stats.avg_doc_len == 1.5
    assert stats.doc_freq == {"a": 2, "b": 1}


def test_corpus_stats_empty_pool():
    stats = build_corpus_stats([])
    assert stats.doc_count == 0


def test_doc_freq_counts_each_doc_once():
    stats = build_corpus_stats([_ev("a", "kid kid kid")])
    assert stats.doc_freq == {"kid": 1}


def test_bm25_zero_for_no_overlap_and_empty_query():
    pool = [_ev("a", "kid a"), _ev("b", "rolling stone magazine")]
    stats = build_corpus_stats(pool)
    q = build_query([], "zyzzyva")
    assert bm25_score(q, pool[0], stats) == 0.0
    q2 = build_query([], "?")  # tokenizes to nothing
    assert bm25_score(q2, pool[0], stats) == 0.0


def test_bm25_matches_brute_force_oracle():
    pool = [_ev("a", "kid a"), _ev("b", "rolling stone magazine")]
    stats = build_corpus_stats(pool)
    q = build_query([], "kid")
    expected = bm25_oracle(["kid"], [tokenize_for_ranking(e.linearized) for e in pool], 0)
    assert abs(bm25_score(q, pool[0], stats) - expected) < 1e-9


def test_bm25_requires_nonempty_corpus():
    with pytest.raises(InvalidStateError):
        bm25_score(build_query([], "q"), _ev("a", "x"), build_corpus_stats([]))


def test_bm25_monotone_in_term_frequency():
    texts = ["kid", "kid kid", "kid kid kid"]
    pool = [_ev(f"d{i}", t) for i, t in enumerate(texts)]
    stats = build_corpus_stats(pool)
    q = build_query([], "kid")
    scores = [bm25_score(q, ev, stats) for ev in pool]
    assert scores[0] < scores[1] < scores[2]


def test_bm25_random_corpus_vs_oracle():
    rng = np.random.default_rng(11)
    words = [f"w{i}" for i in range(30)]
    pool = []
    for i in range(100):
        n = int(rng.integers(1, 12))
        pool.append(_ev(f"d{i:03d}", " ".join(rng.choice(words, size=n))))
    stats = build_corpus_stats(pool)
    q = build_query([], "w1 w2 w3 w1")
    tokenized = [tokenize_for_ranking(e.linearized) for e in pool]
    for idx in range(0, 100, 7):
        expected = bm25_oracle(["w1", "w2", "w3"], tokenized, idx)
        assert abs(bm25_score(q, pool[idx], stats) - expected) < 1e-9


def test_rank_evidence_k_exceeds_pool():
    pool = [_ev("a", "x"), _ev("b", "y")]
    ranked = rank_evidence(build_query([], "z"), pool, k=3)
    assert len(ranked) == 2


def test_rank_evidence_tie_break_ascending_id():
    pool = [_ev("b", "x"), _ev("a", "x"), _ev("c", "x")]
    ranked = rank_evidence(build_query([], "unrelated"), pool, k=2)
    assert [r.evidence.evidence_id for r in ranked] == ["a", "b"]
    assert [r.rank for r in ranked] == [1, 2]


def test_rank_evidence_matches_full_sort_oracle():
    rng = np.random.default_rng(3)
    words = [f"w{i}" for i in range(15)]
    pool = [
        _ev(f"d{i:03d}", " ".join(rng.choice(words, size=int(rng.integers(1, 9)))))
        for i in range(100)
    ]
    q = build_query([], "w0 w3 w7")
    stats = build_corpus_stats(pool)
    expected = sorted(
        ((bm25_score(q, ev, stats), ev.evidence_id) for ev in pool),
        key=lambda pair: (-pair[0], pair[1]),
    )
    ranked = rank_evidence(q, pool, k=10)
    assert [r.evidence.evidence_id for r in ranked] == [eid for _, eid in expected[:10]]


def test_rank_evidence_prefix_property():
    rng = np.random.default_rng(5)
    words = [f"w{i}" for i in range(10)]
    pool = [
        _ev(f"d{i:03d}", " ".join(rng.choice(words, size=int(rng.integers(1, 7)))))
        for i in range(40)
    ]
    q = build_query([], "w0 w1")
    top5 = [r.evidence.evidence_id for r in rank_evidence(q, pool, k=5)]
    top20 = [r.evidence.evidence_id for r in rank_evidence(q, pool, k=20)]
    assert top20[:5] == top5


def test_rank_evidence_requires_positive_k():
    with pytest.raises(InvalidInputError):
        rank_evidence(build_query([], "q"), [], k=0)


def test_tfidf_cosine_self_similarity_is_one():
    scorer = TfidfCosineScorer(["kid a", "rolling stone"])
    assert scorer.score("kid a", "kid a") == 1.0
    assert scorer.score("kid a", "rolling stone") <= 1.0


def test_tfidf_cosine_in_unit_interval():
    scorer = TfidfCosineScorer()
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(6)]
    for _ in range(50):
        a = " ".join(rng.choice(words, size=int(rng.integers(1, 8))))
        b = " ".join(rng.choice(words, size=int(rng.integers(1, 8))))
        assert 0.0 <= scorer.score(a, b) <= 1.0


def test_rerank_single_item_and_ordering_oracle():
    q = build_query([], "kid a album")
    single = rerank(q, [_ev("only", "anything at all")], TfidfCosineScorer())
    assert single[0].rank == 1

    rng = np.random.default_rng(9)
    words = ["kid", "a", "album", "stone", "magazine", "rank"]
    pool = [
        _ev(f"d{i:02d}", " ".join(rng.choice(words, size=int(rng.integers(1, 8)))))
        for i in range(50)
    ]
    scorer = TfidfCosineScorer()
    ranked = rerank(q, pool, scorer)
    q_tokens = tokenize_for_ranking(q.text)
    expected = sorted(
        (
            (-cosine_oracle(q_tokens, tokenize_for_ranking(ev.linearized)), ev.evidence_id)
            for ev in pool
        ),
    )
    assert [r.evidence.evidence_id for r in ranked] == [eid for _, eid in expected]


def test_rerank_missing_embedding_goes_last(tmp_path, caplog):
    import json

    path = tmp_path / "emb.jsonl"
    q = build_query([], "the query")
    records = [
        {"id": "the query", "vector": [1.0, 0.0]},
        {"id": "a", "vector": [1.0, 0.0]},
        {"id": "b", "vector": [0.5, 0.5]},
    ]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    scorer = EmbeddingCosineScorer(path)
    pool = [_ev("a", "first"), _ev("b", "second"), _ev("missing", "third")]
    with caplog.at_level("WARNING"):
        ranked = rerank(q, pool, scorer)
    assert ranked[-1].evidence.evidence_id == "missing"
    assert ranked[-1].score == float("-inf")
    assert any("missing" in message for message in caplog.messages)
    assert [r.evidence.evidence_id for r in ranked[:2]] == ["a", "b"]


def test_rerank_supports_two_argument_scorers():
    class PlainScorer:
        def score(self, query_text, evidence_text):
            return float(len(evidence_text))

    q = build_query([], "q")
    pool = [_ev("a", "xx"), _ev("b", "xxxx")]
    ranked = rerank(q, pool, PlainScorer())
    assert [r.evidence.evidence_id for r in ranked] == ["b", "a"]


def test_ranking_deterministic():
    rng = np.random.default_rng(2)
    words = [f"w{i}" for i in range(8)]
    pool = [
        _ev(f"d{i:02d}", " ".join(rng.choice(words, size=int(rng.integers(1, 6)))))
        for i in range(30)
    ]
    q = build_query([], "w0 w5")
    first = [(r.evidence.evidence_id, r.score) for r in rank_evidence(q, pool, k=10)]
    second = [(r.evidence.evidence_id, r.score) for r in rank_evidence(q, pool, k=10)]
    assert first == second
