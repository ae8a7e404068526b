import pytest

from convgraph.errors import InvalidInputError
from convgraph.evidence import Evidence, SourceKind
from convgraph.linearize import (
    LinearizeOptions,
    linearize_evidence,
    linearize_infobox,
    linearize_table_row,
    linearize_triple,
    split_sentences,
)

ROW_HEADERS = ["Publication", "Country", "Accolade", "Year", "Rank"]
ROW_CELLS = ["Rolling Stone", "US", "The 100 Best Albums of the decade", "2009", "1"]


def test_triple_examples():
    assert linearize_triple("Kid A", "publication", "2 October 2000") == (
        "Kid A, publication, 2 October 2000"
    )
    assert linearize_triple("Rolling Stone", "Editor", "Noah Shachtman") == (
        "Rolling Stone, Editor, Noah Shachtman"
    )


def test_triple_rejects_empty_element():
    with pytest.raises(InvalidInputError):
        linearize_triple("a", "b", "")


def test_triple_adds_exactly_two_separator_commas():
    out = linearize_triple("a,b", "c", "d")
    assert out.count(",") == 2 + "a,b".count(",")


def test_table_row_without_title():
    assert linearize_table_row("Kid A", ROW_HEADERS, ROW_CELLS, prepend_title=False) == (
        "Publication Rolling Stone, Country US, Accolade The 100 Best Albums of the decade, "
        "Year 2009, Rank 1"
    )


def test_table_row_with_title():
    out = linearize_table_row("Kid A", ROW_HEADERS, ROW_CELLS, prepend_title=True)
    assert out.startswith("Kid A, Publication Rolling Stone, ")
    assert out.endswith("Rank 1")


def test_table_row_length_mismatch():
    with pytest.raises(InvalidInputError):
        linearize_table_row("T", ["A"], ["x", "y"])


def test_infobox_examples():
    assert linearize_infobox("Rolling Stone", None, [("Editor", "Noah Shachtman")]) == (
        "Rolling Stone, Editor Noah Shachtman"
    )
    assert linearize_infobox("X", "Details", [("Founded", "1967")]) == "X, Details, Founded 1967"
    with pytest.raises(InvalidInputError):
        linearize_infobox("X", None, [])


def test_split_sentences_guards_initials():
    text = "Rolling Stone was founded in San Francisco in 1967 by Jann Wenner and Ralph J. Gleason."
    assert split_sentences("Rolling Stone", text, prepend_title=False) == [text]


def test_split_sentences_start_of_text_initial_is_exempt():
    assert split_sentences("T", "A. B? C.", prepend_title=False) == ["A.", "B?", "C."]


def test_split_sentences_empty_input():
    assert split_sentences("T", "", prepend_title=False) == []


def test_split_sentences_prefixes_title():
    out = split_sentences("Kid A", "First thing. Second thing.", prepend_title=True)
    assert out == ["Kid A: First thing.", "Kid A: Second thing."]


def test_split_only_before_uppercase():
    out = split_sentences("T", "It cost 3.50 dollars. Next sentence.", prepend_title=False)
    assert out == ["It cost 3.50 dollars.", "Next sentence."]


def test_linearize_evidence_dispatch():
    kb = Evidence(
        evidence_id="e1",
        source_kind=SourceKind.KB,
        payload={"subject": "Kid A", "predicate": "publication", "object": "2 October 2000"},
    )
    assert linearize_evidence(kb).linearized == "Kid A, publication, 2 October 2000"

    table = Evidence(
        evidence_id="e2",
        source_kind=SourceKind.TABLE,
        payload={"headers": ROW_HEADERS, "cells": ROW_CELLS},
        article_title="Kid A",
    )
    assert linearize_evidence(table).linearized.startswith("Kid A, Publication Rolling Stone")
    off = LinearizeOptions(prepend_title_table=False)
    assert linearize_evidence(table, off).linearized.startswith("Publication Rolling Stone")

    text = Evidence(
        evidence_id="e3",
        source_kind=SourceKind.TEXT,
        payload={"sentence": "Rolling Stone was founded in San Francisco in 1967."},
        article_title="Rolling Stone",
    )
    assert linearize_evidence(text).linearized == (
        "Rolling Stone: Rolling Stone was founded in San Francisco in 1967."
    )


def test_linearize_is_deterministic():
    ev = Evidence(
        evidence_id="e1",
        source_kind=SourceKind.INFOBOX,
        payload={"header": None, "pairs": [["Editor", "Noah Shachtman"]]},
        article_title="Rolling Stone",
    )
    first = linearize_evidence(ev).linearized
    assert all(linearize_evidence(ev).linearized == first for _ in range(5))
