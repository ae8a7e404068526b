"""Synthetic datasets: overfit sanity sets, random graphs, and a two-hop task.

The two-hop task makes the answer reachable only by composing two evidence
instances through a shared bridge entity: one instance links the questioned
subject to a bridge, another pairs that bridge with the answer code.  With
entity links the two chains are joined in the graph; the chain-only ablation
must recover the composition from content alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evidence import EntityRef, Evidence, SourceKind
from .graph import EdgeKind, EvidenceGraph, GraphBuildOptions, Vocab, build_graph
from .linearize import LinearizeOptions, linearize_evidence
from .lm import build_prompt
from .training import TrainExample

__all__ = [
    "random_evidence_pool",
    "random_graph",
    "build_overfit_task",
    "TwoHopExample",
    "TwoHopTask",
    "build_two_hop_task",
    "two_hop_train_examples",
    "strip_entity_links",
]


def random_evidence_pool(
    rng: np.random.Generator,
    n_instances: int,
    n_entities: int = 4,
    max_words: int = 6,
) -> tuple[list[Evidence], list[EntityRef], Vocab]:
    """Random linearized sentence instances with known entity mentions."""
    entities = [EntityRef(entity_id=f"e{i}", label=f"ent{i}") for i in range(n_entities)]
    fillers = [f"w{i}" for i in range(20)]
    instances = []
    for i in range(n_instances):
        words = [fillers[int(rng.integers(len(fillers)))] for _ in range(int(rng.integers(1, max_words + 1)))]
        for ent in entities:
            if rng.random() < 0.5:
                pos = int(rng.integers(0, len(words) + 1))
                words.insert(pos, ent.label)
        ev = Evidence(
            evidence_id=f"ev{i:03d}",
            source_kind=SourceKind.TEXT,
            payload={"sentence": " ".join(words)},
        )
        instances.append(ev.with_linearized(" ".join(words)))
    texts = [ev.linearized for ev in instances]
    vocab = Vocab.from_texts(texts)
    return instances, entities, vocab


def random_graph(
    rng: np.random.Generator,
    max_nodes: int = 20,
    n_entities: int = 3,
) -> tuple[EvidenceGraph, Vocab]:
    """A random evidence graph with at most ``max_nodes`` nodes."""
    while True:
        n_instances = int(rng.integers(1, 5))
        instances, entities, vocab = random_evidence_pool(
            rng, n_instances, n_entities=n_entities, max_words=4
        )
        graph = build_graph(instances, entities, vocab)
        if 0 < len(graph.nodes) <= max_nodes:
            return graph, vocab


def strip_entity_links(graph: EvidenceGraph) -> EvidenceGraph:
    """The chain-only ablation: drop every entity-link edge."""
    edges = tuple(e for e in graph.edges if e.kind is not EdgeKind.ENTITY_LINK)
    return EvidenceGraph(nodes=graph.nodes, edges=edges, turn=graph.turn)


# ---------------------------------------------------------------------------
# Overfit task
# ---------------------------------------------------------------------------


def build_overfit_task(rng: np.random.Generator, n_examples: int = 20) -> tuple[Vocab, list[TrainExample]]:
    """Tiny lookup task: each question names a subject whose value is one token."""
    subjects = [f"item{i}" for i in range(n_examples)]
    answers = [f"val{i}" for i in range(n_examples)]
    raw = []
    for i in range(n_examples):
        ev = Evidence(
            evidence_id=f"fact{i}",
            source_kind=SourceKind.KB,
            payload={"subject": subjects[i], "predicate": "value", "object": answers[i]},
        )
        raw.append(linearize_evidence(ev))
    texts = [ev.linearized for ev in raw]
    prompts = [build_prompt([], f"what is {subjects[i]}?") for i in range(n_examples)]
    vocab = Vocab.from_texts(texts + [p.prefix + " " + p.suffix for p in prompts])

    examples = []
    for i in range(n_examples):
        lexicon = [EntityRef(entity_id=subjects[i], label=subjects[i])]
        graph = build_graph([raw[i]], lexicon, vocab)
        examples.append(
            TrainExample(
                example_id=f"overfit{i}",
                graph=graph,
                prefix=prompts[i].prefix,
                suffix=prompts[i].suffix,
                answer=answers[i],
            )
        )
    return vocab, examples


# ---------------------------------------------------------------------------
# Two-hop composition task
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoHopExample:
    example_id: str
    instances: tuple[Evidence, ...]
    lexicon: tuple[EntityRef, ...]
    question: str
    answer: str


@dataclass(frozen=True)
class TwoHopTask:
    vocab: Vocab
    train: tuple[TwoHopExample, ...]
    heldout: tuple[TwoHopExample, ...]


def _two_hop_example(
    rng: np.random.Generator,
    example_id: str,
    subjects: list[str],
    bridges: list[str],
    codes: list[str],
    n_distractors: int,
) -> TwoHopExample:
    subject = subjects[int(rng.integers(len(subjects)))]
    bridge_pool = [bridges[i] for i in rng.permutation(len(bridges))[: n_distractors + 1]]
    bridge = bridge_pool[0]
    code_choices = rng.permutation(len(codes))
    answer = codes[int(code_choices[0])]

    # two-token chains keep the answer one hop from the linked bridge head,
    # within reach of a two-layer encoder
    instances = [
        Evidence(
            evidence_id=f"{example_id}.link",
            source_kind=SourceKind.TEXT,
            payload={"sentence": f"{subject} {bridge}"},
        )
    ]
    pair_rows = list(enumerate(bridge_pool))
    rng.shuffle(pair_rows)  # the correct code instance sits at a random slot
    for slot, (original_idx, b) in enumerate(pair_rows):
        code = answer if original_idx == 0 else codes[int(code_choices[1 + original_idx])]
        instances.append(
            Evidence(
                evidence_id=f"{example_id}.code{slot}",
                source_kind=SourceKind.TEXT,
                payload={"sentence": f"{b} {code}"},
            )
        )
    options = LinearizeOptions(prepend_title_text=False)
    instances = [linearize_evidence(ev, options) for ev in instances]
    lexicon = tuple(
        EntityRef(entity_id=name, label=name) for name in sorted({subject, *bridge_pool})
    )
    return TwoHopExample(
        example_id=example_id,
        instances=tuple(instances),
        lexicon=lexicon,
        question=f"which code has {subject}?",
        answer=answer,
    )


def build_two_hop_task(
    rng: np.random.Generator,
    n_examples: int = 200,
    n_heldout: int = 40,
    n_subjects: int = 10,
    n_bridges: int = 8,
    n_codes: int = 10,
    n_distractors: int = 2,
) -> TwoHopTask:
    subjects = [f"sub{i}" for i in range(n_subjects)]
    bridges = [f"br{i}" for i in range(n_bridges)]
    codes = [f"k{i}" for i in range(n_codes)]
    examples = [
        _two_hop_example(rng, f"hop{i:03d}", subjects, bridges, codes, n_distractors)
        for i in range(n_examples)
    ]
    texts = [ev.linearized for ex in examples for ev in ex.instances]
    prompts = [build_prompt([], ex.question) for ex in examples]
    vocab = Vocab.from_texts(texts + [p.prefix + " " + p.suffix for p in prompts])
    split = n_examples - n_heldout
    return TwoHopTask(
        vocab=vocab,
        train=tuple(examples[:split]),
        heldout=tuple(examples[split:]),
    )


def two_hop_train_examples(
    task_examples: tuple[TwoHopExample, ...],
    vocab: Vocab,
    entity_links: bool,
    options: GraphBuildOptions | None = None,
) -> list[TrainExample]:
    out = []
    for ex in task_examples:
        graph = build_graph(list(ex.instances), list(ex.lexicon), vocab, options=options)
        if not entity_links:
            graph = strip_entity_links(graph)
        prompt = build_prompt([], ex.question)
        out.append(
            TrainExample(
                example_id=ex.example_id,
                graph=graph,
                prefix=prompt.prefix,
                suffix=prompt.suffix,
                answer=ex.answer,
            )
        )
    return out
