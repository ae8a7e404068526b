import json

import pytest
from hypothesis import given, strategies as st

from convgraph.errors import InvalidInputError
from convgraph.evidence import (
    EntityRef,
    Evidence,
    Interaction,
    SourceKind,
    Turn,
    build_query,
    evidence_from_dict,
    evidence_to_dict,
    interaction_from_dict,
    interaction_to_dict,
    read_interactions,
    read_pools,
    write_interactions,
    write_pools,
)

KID_A_HISTORY = [
    ("What is the release date of album Kid A?", "2 October 2000"),
    ("Fact Rank?", "7"),
]


def test_build_query_empty_history():
    q = build_query([], "What is the release date of album Kid A?")
    assert q.turn == 1
    assert len(q.parts) == 1
    assert q.parts[0].role == "question"
    assert q.text == "What is the release date of album Kid A?"


def test_build_query_interleaves_history():
    q = build_query(KID_A_HISTORY, "Ranking on Rolling Stone in 2009?")
    assert q.turn == 3
    assert len(q.parts) == 5
    assert [p.role for p in q.parts] == ["question", "answer", "question", "answer", "question"]
    assert q.parts[-1].text == "Ranking on Rolling Stone in 2009?"
    assert q.text == (
        "What is the release date of album Kid A? 2 October 2000 "
        "Fact Rank? 7 Ranking on Rolling Stone in 2009?"
    )


def test_build_query_rejects_empty_question():
    with pytest.raises(InvalidInputError):
        build_query(KID_A_HISTORY, "")
    with pytest.raises(InvalidInputError):
        build_query([("q", "")], "next?")


@given(st.lists(st.tuples(st.text(min_size=1), st.text(min_size=1)), max_size=6))
def test_build_query_part_count(history):
    q = build_query(history, "final question?")
    assert len(q.parts) == 2 * len(history) + 1
    for i, (question, answer) in enumerate(history):
        assert q.parts[2 * i].text == question
        assert q.parts[2 * i + 1].text == answer


def test_source_kind_serializes_lowercase():
    assert SourceKind.KB.value == "kb"
    assert SourceKind("infobox") is SourceKind.INFOBOX


def test_turn_validation():
    with pytest.raises(InvalidInputError):
        Turn(index=0, question="q", gold_answer="a")
    with pytest.raises(InvalidInputError):
        Turn(index=1, question="", gold_answer="a")


def test_interaction_requires_contiguous_turns():
    turns = (
        Turn(index=1, question="q1", gold_answer="a1"),
        Turn(index=3, question="q3", gold_answer="a3"),
    )
    with pytest.raises(InvalidInputError):
        Interaction(conv_id="c1", domain="Music", turns=turns)


def test_entity_aliases_dedupe_case_insensitively():
    ent = EntityRef(entity_id="Q1", label="United States", aliases=("USA", "usa", "US"))
    assert ent.aliases == ("USA", "US")


def test_evidence_roundtrip():
    ev = Evidence(
        evidence_id="e1",
        source_kind=SourceKind.TABLE,
        payload={"headers": ["Year"], "cells": ["2009"]},
        article_title="Kid A",
        linearized="Kid A, Year 2009",
        entities=(EntityRef(entity_id="Q1", label="Kid A"),),
        origin_turn=2,
    )
    assert evidence_from_dict(evidence_to_dict(ev)) == ev


def test_interaction_roundtrip():
    inter = Interaction(
        conv_id="c1",
        domain="Music",
        turns=(
            Turn(index=1, question="q1", gold_answer="a1", answer_source=SourceKind.KB,
                 domain="Music", gold_aliases=("alias",)),
            Turn(index=2, question="q2", gold_answer="a2", domain="Music"),
        ),
    )
    assert interaction_from_dict(interaction_to_dict(inter)) == inter


def test_jsonl_files_roundtrip(tmp_path):
    inter = Interaction(
        conv_id="c9",
        domain="Books",
        turns=(Turn(index=1, question="who?", gold_answer="them", domain="Books"),),
    )
    path = tmp_path / "interactions.jsonl"
    write_interactions([inter], path)
    assert read_interactions(path) == [inter]

    pool = {
        ("c9", 1): [
            Evidence(
                evidence_id="e1",
                source_kind=SourceKind.KB,
                payload={"subject": "a", "predicate": "b", "object": "c"},
            )
        ]
    }
    pool_path = tmp_path / "pools.jsonl"
    write_pools(pool, pool_path)
    assert read_pools(pool_path) == pool


def test_interactions_schema_keys(tmp_path):
    obj = {
        "conv_id": "c1",
        "domain": "Soccer",
        "turns": [
            {"index": 1, "question": "q", "answer": "a", "answer_aliases": ["x"],
             "answer_source": "table"},
        ],
    }
    path = tmp_path / "i.jsonl"
    path.write_text(json.dumps(obj) + "\n")
    [inter] = read_interactions(path)
    assert inter.turns[0].answer_source is SourceKind.TABLE
    assert inter.turns[0].gold_aliases == ("x",)
