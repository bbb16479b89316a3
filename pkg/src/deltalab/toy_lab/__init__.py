"""Desk-scale two-stage (CPT -> SFT) adaptation lab on synthetic corpora."""

from .config import (
    BOS_ID,
    EOS_ID,
    SEP_ID,
    ExperimentConfig,
    OptimizerConfig,
    StagePlan,
    SyntheticCorpusSpec,
    ToyModelConfig,
    default_cpt_plan,
    default_experiment,
    default_sft_plan,
    load_experiment_config,
)
from .corpus import (
    MarkovLanguage,
    TokenSample,
    build_languages,
    generate_corpus,
    generate_heldout,
    generate_translation_prompts,
    invert_bijection,
    stratified_counts,
    token_bijection,
    tokens_to_text,
)
from .model import (
    build_model,
    gradcheck,
    greedy_decode,
    init_params,
    loss_and_grads,
    parameter_names,
    params_from_checkpoint,
    token_logliks,
)
from .pipeline import PipelineResult, embedding_row_localization, run_pipeline
from .training import AdamW, WindowDataset, build_windows, lr_at, train_stage

__all__ = [
    "BOS_ID",
    "EOS_ID",
    "SEP_ID",
    "ExperimentConfig",
    "OptimizerConfig",
    "StagePlan",
    "SyntheticCorpusSpec",
    "ToyModelConfig",
    "default_cpt_plan",
    "default_experiment",
    "default_sft_plan",
    "load_experiment_config",
    "MarkovLanguage",
    "TokenSample",
    "build_languages",
    "generate_corpus",
    "generate_heldout",
    "generate_translation_prompts",
    "invert_bijection",
    "stratified_counts",
    "token_bijection",
    "tokens_to_text",
    "build_model",
    "gradcheck",
    "greedy_decode",
    "init_params",
    "loss_and_grads",
    "parameter_names",
    "params_from_checkpoint",
    "token_logliks",
    "PipelineResult",
    "embedding_row_localization",
    "run_pipeline",
    "AdamW",
    "WindowDataset",
    "build_windows",
    "lr_at",
    "train_stage",
]
