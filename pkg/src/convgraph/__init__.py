"""Graph-augmented conversational question answering over heterogeneous evidence.

The package covers the full desk-scale pipeline: evidence linearization and
BM25 ranking, a turn-wise evidence memory, token-chain graph construction
with entity linking, a graph attention encoder whose node embeddings are
injected into a toy decoder LM (bypassing its token-embedding lookup),
completion-only cross-entropy training with low-rank adapters, and the
evaluation harness (Levenshtein answer normalization, H@1/H@5, stratified
reports).
"""

__version__ = "0.1.0"

from .errors import ConvGraphError, InvalidInputError, InvalidStateError
from .evidence import (
    ConversationQuery,
    EntityRef,
    Evidence,
    Interaction,
    SourceKind,
    Turn,
    build_query,
)
from .linearize import (
    linearize_evidence,
    linearize_infobox,
    linearize_table_row,
    linearize_triple,
    split_sentences,
)
from .ranking import (
    CorpusStats,
    RankedEvidence,
    TfidfCosineScorer,
    bm25_score,
    build_corpus_stats,
    rank_evidence,
    rerank,
)
from .memory import EvidenceMemory, merge_with_memory, update_memory
from .graph import (
    EvidenceGraph,
    GraphBuildOptions,
    Vocab,
    build_graph,
    deserialize_graph,
    match_entities,
    serialize_graph,
    tokenize,
)
from .gat import (
    GatParams,
    NodeEmbeddingTable,
    attention_coefficients,
    gat_backward,
    gat_forward,
    gat_forward_tape,
    init_gat_params,
    init_node_embeddings,
)
from .lm import (
    LoraAdapter,
    PromptTemplate,
    ToyLmParams,
    assemble_embeddings,
    build_prompt,
    embed_tokens,
    generate,
    init_lm_params,
    init_lora,
    lm_forward,
    lora_apply,
)
from .training import (
    ModelDims,
    ModelParams,
    TrainConfig,
    TrainExample,
    init_model_params,
    load_checkpoint,
    save_checkpoint,
    train_loop,
)
from .evaluation import (
    EvalRecord,
    MetricsReport,
    classify_answer_type,
    levenshtein,
    normalize_answer,
    score_turn,
    stratify,
)
from .pipeline import PipelineConfig, answer_turn, run_pipeline
