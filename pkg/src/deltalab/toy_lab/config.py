"""Configuration types for the desk-scale two-stage training experiment."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

# Reserved token ids; language token ranges must stay clear of these.
BOS_ID = 0
EOS_ID = 1
SEP_ID = 2
NUM_SPECIALS = 3

TASK_KINDS = ("target_monolingual", "target_instruction", "cross_translation", "anchor_general")
SFT_TASK_KINDS = ("target_instruction", "cross_translation", "anchor_general")


@dataclass(frozen=True)
class ToyModelConfig:
    """Fixed-window gated-MLP language model dimensions.

    Tensor names follow the decoder convention the taxonomy expects:
    model.embed_tokens.weight, model.layers.<i>.mlp.{gate,up,down}_proj.weight,
    lm_head.weight.
    """

    vocab_size: int = 64
    embed_dim: int = 16
    context_k: int = 4
    num_blocks: int = 6
    hidden_dim: int = 32
    seed: int = 1234

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ValueError("vocab_size must be >= 4")
        for name in ("embed_dim", "context_k", "num_blocks", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def window_dim(self) -> int:
        return self.context_k * self.embed_dim

    @property
    def param_count(self) -> int:
        per_block = 2 * self.hidden_dim * self.window_dim + self.window_dim * self.hidden_dim
        return (
            self.vocab_size * self.embed_dim
            + self.num_blocks * per_block
            + self.vocab_size * self.window_dim
        )


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Two synthetic 'languages' as seeded order-2 Markov chains over
    disjoint token ranges, plus corpus sizing."""

    base_range: Tuple[int, int] = (4, 34)
    target_range: Tuple[int, int] = (34, 64)
    seq_len_range: Tuple[int, int] = (16, 32)  # monolingual documents, inclusive
    pair_len_range: Tuple[int, int] = (6, 12)  # instruction prompts/responses
    cpt_size: int = 2000
    sft_size: int = 1000
    heldout_size: int = 200
    dirichlet_alpha: float = 0.3  # lower -> sharper, more learnable transitions
    order2_strength: float = 0.5  # how much the token two back modulates the next-token row
    seed: int = 1234

    def __post_init__(self):
        for label, (lo, hi) in (("base_range", self.base_range), ("target_range", self.target_range)):
            if not (0 <= lo < hi):
                raise ValueError(f"{label} must be a non-empty half-open range, got [{lo}, {hi})")
            if lo < NUM_SPECIALS:
                raise ValueError(f"{label} collides with reserved special tokens [0, {NUM_SPECIALS})")
        b_lo, b_hi = self.base_range
        t_lo, t_hi = self.target_range
        if max(b_lo, t_lo) < min(b_hi, t_hi):
            raise ValueError("base_range and target_range must be disjoint")
        for label, (lo, hi) in (("seq_len_range", self.seq_len_range), ("pair_len_range", self.pair_len_range)):
            if lo < 1 or lo > hi:
                raise ValueError(f"{label} must satisfy 1 <= min <= max")
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")
        if self.order2_strength < 0:
            raise ValueError("order2_strength must be non-negative")

    def validate_against(self, cfg: ToyModelConfig) -> None:
        if max(self.base_range[1], self.target_range[1]) > cfg.vocab_size:
            raise ValueError("token ranges exceed the model vocabulary")


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_frac: float = 0.05

    def to_meta(self) -> Dict[str, str]:
        return {
            "optimizer": "adamw",
            "beta1": str(self.beta1),
            "beta2": str(self.beta2),
            "eps": str(self.eps),
            "weight_decay": str(self.weight_decay),
            "warmup_frac": str(self.warmup_frac),
        }


@dataclass(frozen=True)
class StagePlan:
    """One training stage: data mixture plus optimization settings.

    The loss mask is pinned per stage: next-token loss over all positions
    for CPT, response positions only for SFT.
    """

    stage: str  # "CPT" | "SFT"
    mixture: Tuple[Tuple[str, float], ...]
    epochs: int
    learning_rate: float
    batch_size: int
    loss_mask: str = ""
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.stage not in ("CPT", "SFT"):
            raise ValueError(f"stage must be CPT or SFT, got {self.stage!r}")
        expected_mask = "all_tokens" if self.stage == "CPT" else "response_only"
        mask = self.loss_mask or expected_mask
        if mask != expected_mask:
            raise ValueError(f"{self.stage} plans must use loss_mask={expected_mask!r}")
        object.__setattr__(self, "loss_mask", mask)

        if not self.mixture:
            raise ValueError("mixture must be non-empty")
        total = sum(w for _, w in self.mixture)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {total}")
        allowed = ("target_monolingual",) if self.stage == "CPT" else SFT_TASK_KINDS
        for kind, weight in self.mixture:
            if kind not in allowed:
                raise ValueError(f"task kind {kind!r} not allowed in {self.stage}")
            if weight < 0:
                raise ValueError("mixture weights must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def default_cpt_plan() -> StagePlan:
    return StagePlan(
        stage="CPT",
        mixture=(("target_monolingual", 1.0),),
        epochs=1,
        learning_rate=5e-3,
        batch_size=64,
    )


def default_sft_plan() -> StagePlan:
    # SFT learning rate is CPT/5, mirroring the usual drop when moving from
    # distributional adaptation to supervised alignment.
    return StagePlan(
        stage="SFT",
        mixture=(
            ("target_instruction", 0.4),
            ("cross_translation", 0.4),
            ("anchor_general", 0.2),
        ),
        epochs=2,
        learning_rate=1e-3,
        batch_size=64,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    model: ToyModelConfig
    corpus: SyntheticCorpusSpec
    cpt: StagePlan
    sft: StagePlan

    def __post_init__(self):
        self.corpus.validate_against(self.model)


def default_experiment(seed: int = 1234) -> ExperimentConfig:
    return ExperimentConfig(
        model=ToyModelConfig(seed=seed),
        corpus=SyntheticCorpusSpec(seed=seed),
        cpt=default_cpt_plan(),
        sft=default_sft_plan(),
    )


def _parse_range(text: str) -> Tuple[int, int]:
    lo, _, hi = text.partition(":")
    return int(lo), int(hi)


def _parse_mixture(text: str) -> Tuple[Tuple[str, float], ...]:
    parts = []
    for item in text.split(","):
        kind, _, weight = item.strip().partition(":")
        parts.append((kind.strip(), float(weight)))
    return tuple(parts)


def load_experiment_config(path: Union[str, Path], seed: int | None = None) -> ExperimentConfig:
    """Read an INI experiment file; omitted keys fall back to defaults.

    `seed` overrides both the model and corpus seeds when given (the CLI
    routes its --seed flag here).
    """
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")

    defaults = default_experiment()

    def get(section: str, key: str, fallback):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            kind = type(fallback)
            if kind is bool:
                return parser.getboolean(section, key)
            if kind is int:
                return int(raw)
            if kind is float:
                return float(raw)
            return raw
        return fallback

    model_seed = seed if seed is not None else get("model", "seed", defaults.model.seed)
    model = ToyModelConfig(
        vocab_size=get("model", "vocab_size", defaults.model.vocab_size),
        embed_dim=get("model", "embed_dim", defaults.model.embed_dim),
        context_k=get("model", "context_k", defaults.model.context_k),
        num_blocks=get("model", "num_blocks", defaults.model.num_blocks),
        hidden_dim=get("model", "hidden_dim", defaults.model.hidden_dim),
        seed=model_seed,
    )

    corpus_seed = seed if seed is not None else get("corpus", "seed", defaults.corpus.seed)
    corpus = SyntheticCorpusSpec(
        base_range=_parse_range(get("corpus", "base_range", "4:34")),
        target_range=_parse_range(get("corpus", "target_range", "34:64")),
        seq_len_range=_parse_range(get("corpus", "seq_len", "8:16")),
        cpt_size=get("corpus", "cpt_size", defaults.corpus.cpt_size),
        sft_size=get("corpus", "sft_size", defaults.corpus.sft_size),
        heldout_size=get("corpus", "heldout_size", defaults.corpus.heldout_size),
        dirichlet_alpha=get("corpus", "dirichlet_alpha", defaults.corpus.dirichlet_alpha),
        seed=corpus_seed,
    )

    optimizer = OptimizerConfig(
        beta1=get("optimizer", "beta1", 0.9),
        beta2=get("optimizer", "beta2", 0.999),
        eps=get("optimizer", "eps", 1e-8),
        weight_decay=get("optimizer", "weight_decay", 0.01),
        warmup_frac=get("optimizer", "warmup_frac", 0.05),
    )

    cpt = StagePlan(
        stage="CPT",
        mixture=_parse_mixture(get("cpt", "mixture", "target_monolingual:1.0")),
        epochs=get("cpt", "epochs", defaults.cpt.epochs),
        learning_rate=get("cpt", "learning_rate", defaults.cpt.learning_rate),
        batch_size=get("cpt", "batch_size", defaults.cpt.batch_size),
        optimizer=optimizer,
    )
    sft = StagePlan(
        stage="SFT",
        mixture=_parse_mixture(
            get("sft", "mixture", "target_instruction:0.4,cross_translation:0.4,anchor_general:0.2")
        ),
        epochs=get("sft", "epochs", defaults.sft.epochs),
        learning_rate=get("sft", "learning_rate", defaults.sft.learning_rate),
        batch_size=get("sft", "batch_size", defaults.sft.batch_size),
        optimizer=optimizer,
    )
    return ExperimentConfig(model=model, corpus=corpus, cpt=cpt, sft=sft)
