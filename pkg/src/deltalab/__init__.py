"""deltalab: checkpoint adaptation forensics.

Layer-wise parameter-delta analysis across training stages, translation and
language-modeling metrics, and a desk-scale two-stage training lab that
produces real checkpoints for the analysis pipeline.
"""

__version__ = "0.1.0"

from .delta_analysis import (
    CorrelationReport,
    DeltaEntry,
    DeltaProfile,
    DeltaStats,
    NameSetMismatchError,
    aggregate_by_class,
    correlate,
    delta_l2,
    direction_cosine,
    summarize,
    top_k,
)
from .eval_metrics import (
    EvalCorpus,
    LogLikStream,
    MetricReport,
    Segment,
    corpus_bleu,
    corpus_chrf,
    perplexity,
    pooled_perplexity,
    stage_comparison,
)
from .layer_taxonomy import LayerClass, LayerKey, classify, classify_all, group_by_class
from .tensor_store import (
    Checkpoint,
    CheckpointError,
    TensorRecord,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "__version__",
    "CorrelationReport",
    "DeltaEntry",
    "DeltaProfile",
    "DeltaStats",
    "NameSetMismatchError",
    "aggregate_by_class",
    "correlate",
    "delta_l2",
    "direction_cosine",
    "summarize",
    "top_k",
    "EvalCorpus",
    "LogLikStream",
    "MetricReport",
    "Segment",
    "corpus_bleu",
    "corpus_chrf",
    "perplexity",
    "pooled_perplexity",
    "stage_comparison",
    "LayerClass",
    "LayerKey",
    "classify",
    "classify_all",
    "group_by_class",
    "Checkpoint",
    "CheckpointError",
    "TensorRecord",
    "load_checkpoint",
    "save_checkpoint",
]
