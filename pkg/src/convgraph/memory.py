"""Evidence memory across turns and the splice into the current turn's set.

The memory concatenates every previously retrieved top-k set (deduplicated by
evidence id, earliest origin kept).  At merge time a fraction of the lowest
ranked current instances is replaced by the best memory items under a re-rank
scorer; if the memory cannot supply enough novel items the originally dropped
instances are restored so the output size never changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .evidence import ConversationQuery, Evidence
from .ranking import RankedEvidence, RerankScorer, rerank

__all__ = ["EvidenceMemory", "update_memory", "merge_with_memory"]


@dataclass(frozen=True)
class EvidenceMemory:
    """Pool of instances retrieved at turns 1..turn-1."""

    items: tuple[Evidence, ...] = ()
    turn: int = 1

    def __post_init__(self):
        seen: set[str] = set()
        for ev in self.items:
            if ev.evidence_id in seen:
                raise InvalidInputError(f"duplicate evidence id in memory: {ev.evidence_id}")
            seen.add(ev.evidence_id)
            if ev.origin_turn >= self.turn:
                raise InvalidInputError(
                    f"memory item {ev.evidence_id} has origin_turn {ev.origin_turn} "
                    f">= current turn {self.turn}"
                )

    @staticmethod
    def empty() -> "EvidenceMemory":
        return EvidenceMemory(items=(), turn=1)


def update_memory(memory: EvidenceMemory, e_prev: list[RankedEvidence]) -> EvidenceMemory:
    """Concatenate the just-finished turn's retrieved set and advance the turn.

    Items in ``e_prev`` must carry origin_turn == memory.turn.  Duplicates by
    evidence id keep the earliest occurrence.
    """
    seen = {ev.evidence_id for ev in memory.items}
    appended: list[Evidence] = []
    for ranked in e_prev:
        ev = ranked.evidence
        if ev.evidence_id in seen:
            continue
        seen.add(ev.evidence_id)
        appended.append(ev if ev.origin_turn == memory.turn else ev.with_origin_turn(memory.turn))
    return EvidenceMemory(items=memory.items + tuple(appended), turn=memory.turn + 1)


def merge_with_memory(
    e_t: list[RankedEvidence],
    memory: EvidenceMemory,
    query: ConversationQuery,
    scorer: RerankScorer,
    rho: float,
    mode: str = "rerank",
    rng: np.random.Generator | None = None,
) -> list[Evidence]:
    """Replace the floor(rho*k) lowest-ranked current instances with memory items.

    Memory candidates come from re-ranking against the query (or a uniform
    seeded draw when ``mode="random"``, the random-memory ablation).  Only
    items absent from the retained prefix are spliced in; any shortfall is
    backfilled from the originally dropped items, highest rank first, so the
    result always has exactly ``len(e_t)`` instances and no duplicate ids.
    """
    if not 0.0 <= rho <= 1.0:
        raise InvalidInputError(f"rho must be in [0, 1], got {rho}")
    if mode not in ("rerank", "random"):
        raise InvalidInputError(f"unknown memory merge mode: {mode}")
    current = [r.evidence for r in e_t]
    k = len(current)
    m = math.floor(rho * k)
    if m == 0 or not memory.items:
        return current

    retained = current[: k - m]
    dropped = current[k - m :]
    result = list(retained)
    present = {ev.evidence_id for ev in retained}

    if mode == "random":
        if rng is None:
            raise InvalidInputError("random memory mode requires a seeded generator")
        order = [memory.items[i] for i in rng.permutation(len(memory.items))]
    else:
        order = [r.evidence for r in rerank(query, list(memory.items), scorer)]

    taken = 0
    for ev in order:
        if taken == m:
            break
        if ev.evidence_id in present:
            continue
        result.append(ev)
        present.add(ev.evidence_id)
        taken += 1

    for ev in dropped:  # backfill preserves the original rank order
        if taken == m:
            break
        if ev.evidence_id in present:
            continue
        result.append(ev)
        present.add(ev.evidence_id)
        taken += 1
    return result
