"""Retrieval-based training-set synthesis for zero-shot text classification.

Given only class descriptions and a generic unlabeled corpus, the
pipeline retrieves class-relevant documents round by round, filters them
for label consistency, and trains a classifier on the result. The usual
entry points are :func:`run_regen` for programmatic use and the ``regen``
command line for file-based workflows.
"""

from .classifier import (
    LabeledExample,
    SoftmaxClassifier,
    few_shot_fuse,
    label_smoothed_loss,
    load_model,
    smoothed_target,
    train_classifier,
)
from .config import ConfigError, TaskConfig, config_hash, derive_seed, load_task
from .corpus import (
    Corpus,
    CorpusFormatError,
    Document,
    load_corpus,
    sample_pairs,
    split_sentences,
)
from .encoder import (
    ContrastiveEncoder,
    TrainConfig,
    build_vocabulary,
    infonce_from_similarity,
    infonce_loss,
    load_encoder,
    train_contrastive,
)
from .index import GraphParams, ScoredHit, VectorIndex, build_index, load_index, top_k
from .metrics import (
    QualityReport,
    accuracy,
    build_report,
    macro_f1,
    self_bleu,
    text_counts,
    weighted_jaccard,
)
from .pipeline import (
    ClassSpec,
    PipelineConfig,
    PrecomputedEncoder,
    Query,
    RetrievedExample,
    RoundReport,
    RunResult,
    augment_query,
    build_query,
    cap_and_dedup,
    filter_self_consistency,
    retrieve_round,
    round1_model,
    round1_query_ids,
    run_regen,
)
from .vecio import EmbeddingRecord, FormatError, read_embeddings, write_embeddings

__version__ = "0.1.0"

__all__ = [
    "ClassSpec",
    "ConfigError",
    "ContrastiveEncoder",
    "Corpus",
    "CorpusFormatError",
    "Document",
    "EmbeddingRecord",
    "FormatError",
    "GraphParams",
    "LabeledExample",
    "PipelineConfig",
    "PrecomputedEncoder",
    "QualityReport",
    "Query",
    "RetrievedExample",
    "RoundReport",
    "RunResult",
    "ScoredHit",
    "SoftmaxClassifier",
    "TaskConfig",
    "TrainConfig",
    "VectorIndex",
    "accuracy",
    "augment_query",
    "build_index",
    "build_query",
    "build_report",
    "build_vocabulary",
    "cap_and_dedup",
    "config_hash",
    "derive_seed",
    "few_shot_fuse",
    "filter_self_consistency",
    "infonce_from_similarity",
    "infonce_loss",
    "label_smoothed_loss",
    "load_corpus",
    "load_encoder",
    "load_index",
    "load_model",
    "load_task",
    "macro_f1",
    "retrieve_round",
    "round1_model",
    "round1_query_ids",
    "run_regen",
    "sample_pairs",
    "self_bleu",
    "smoothed_target",
    "split_sentences",
    "text_counts",
    "top_k",
    "train_classifier",
    "train_contrastive",
    "weighted_jaccard",
    "write_embeddings",
]
