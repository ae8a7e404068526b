"""Convert structured evidence payloads to flat text.

Triples become a comma-separated concatenation of their elements, table rows
pair each header with its cell, infobox entries pair keys with values behind
the article title, and raw article text is split into sentences.  All
functions are pure and deterministic: same payload, byte-identical string.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import InvalidInputError
from .evidence import Evidence, SourceKind

SEPARATOR = ", "

__all__ = [
    "SEPARATOR",
    "LinearizeOptions",
    "linearize_triple",
    "linearize_table_row",
    "linearize_infobox",
    "split_sentences",
    "linearize_evidence",
    "linearize_pool",
]


@dataclass(frozen=True)
class LinearizeOptions:
    """Title prepending follows the corpus convention: on for text and tables."""

    prepend_title_table: bool = True
    prepend_title_text: bool = True


def linearize_triple(subject: str, predicate: str, obj: str) -> str:
    """KB triple -> "subject, predicate, object"."""
    if not subject or not predicate or not obj:
        raise InvalidInputError("triple elements must be non-empty")
    return SEPARATOR.join((subject, predicate, obj))


def linearize_table_row(
    article_title: str,
    headers: list[str],
    cells: list[str],
    prepend_title: bool = True,
) -> str:
    """Table row -> "[title, ]header_1 cell_1, header_2 cell_2, ..."."""
    if not headers or not cells:
        raise InvalidInputError("table row must have headers and cells")
    if len(headers) != len(cells):
        raise InvalidInputError(
            f"table row has {len(cells)} cells for {len(headers)} headers"
        )
    parts = [f"{h} {c}" for h, c in zip(headers, cells)]
    if prepend_title and article_title:
        parts.insert(0, article_title)
    return SEPARATOR.join(parts)


def linearize_infobox(
    article_title: str,
    header: str | None,
    pairs: list[tuple[str, str]],
) -> str:
    """Infobox entry -> "title, [header, ]key_1 value_1, key_2 value_2, ..."."""
    if not pairs:
        raise InvalidInputError("infobox entry must have at least one key-value pair")
    parts = [article_title] if article_title else []
    if header:
        parts.append(header)
    parts.extend(f"{k} {v}" for k, v in pairs)
    return SEPARATOR.join(parts)


_UPPER = re.compile(r"[A-Z]")


def _is_initial(text: str, dot_pos: int) -> bool:
    """True when the '.' at dot_pos ends a single-letter name initial.

    The guard only holds when a preceding capitalized word exists ("Ralph J."):
    a single letter at the start of a sentence ("A. B?") is not an initial.
    """
    if dot_pos == 0 or not text[dot_pos - 1].isupper():
        return False
    if dot_pos >= 2 and text[dot_pos - 2].isalnum():
        return False  # letter belongs to a longer word
    # scan back over whitespace to the previous word
    i = dot_pos - 2
    while i >= 0 and text[i].isspace():
        i -= 1
    if i < 0:
        return False  # single letter opens the text: exempt from the guard
    end = i
    while i >= 0 and not text[i].isspace():
        i -= 1
    prev_word = text[i + 1 : end + 1]
    return bool(prev_word) and prev_word[0].isupper()


def split_sentences(article_title: str, text: str, prepend_title: bool = True) -> list[str]:
    """Split article text at '.', '!' or '?' followed by whitespace+uppercase.

    Single-letter initials ("Ralph J. Gleason") do not split.  Each sentence is
    optionally prefixed with "article_title: ".
    """
    sentences: list[str] = []
    start = 0
    for i, ch in enumerate(text):
        if ch not in ".!?":
            continue
        at_end = i == len(text) - 1
        follows = text[i + 1 :].lstrip()
        boundary = at_end or (text[i + 1].isspace() and follows and follows[0].isupper())
        if not boundary:
            continue
        if ch == "." and _is_initial(text, i):
            continue
        sentence = text[start : i + 1].strip()
        if sentence:
            sentences.append(sentence)
        start = i + 1
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    if prepend_title and article_title:
        sentences = [f"{article_title}: {s}" for s in sentences]
    return sentences


def linearize_evidence(ev: Evidence, options: LinearizeOptions | None = None) -> Evidence:
    """Fill the ``linearized`` field of one instance according to its kind."""
    opts = options or LinearizeOptions()
    payload = ev.payload
    if ev.source_kind is SourceKind.KB:
        text = linearize_triple(payload["subject"], payload["predicate"], payload["object"])
    elif ev.source_kind is SourceKind.TABLE:
        text = linearize_table_row(
            ev.article_title or "",
            list(payload["headers"]),
            list(payload["cells"]),
            prepend_title=opts.prepend_title_table,
        )
    elif ev.source_kind is SourceKind.INFOBOX:
        text = linearize_infobox(
            ev.article_title or "",
            payload.get("header"),
            [tuple(p) for p in payload["pairs"]],
        )
    elif ev.source_kind is SourceKind.TEXT:
        sentence = payload["sentence"]
        if not sentence:
            raise InvalidInputError(f"evidence {ev.evidence_id}: empty sentence payload")
        if opts.prepend_title_text and ev.article_title:
            text = f"{ev.article_title}: {sentence}"
        else:
            text = sentence
    else:  # pragma: no cover - SourceKind is closed
        raise InvalidInputError(f"unknown source kind {ev.source_kind}")
    return ev.with_linearized(text)


def linearize_pool(pool: list[Evidence], options: LinearizeOptions | None = None) -> list[Evidence]:
    return [linearize_evidence(ev, options) for ev in pool]
