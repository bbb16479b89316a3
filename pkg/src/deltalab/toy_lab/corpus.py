"""Synthetic corpora: two seeded order-2 Markov 'languages' over disjoint
token ranges, instruction-style pairs, and a token bijection that serves as
exact translation ground truth.

Sequence layout: monolingual text is [BOS] content... [EOS]; prompt/response
pairs are [BOS] prompt... [SEP] response... [EOS]. `first_target` marks the
first sequence index whose prediction carries loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import BOS_ID, EOS_ID, SEP_ID, StagePlan, SyntheticCorpusSpec

# Roles for deriving independent deterministic RNG streams from one seed.
ROLE_BASE_LANG = 0
ROLE_TARGET_LANG = 1
ROLE_BIJECTION = 2
ROLE_CPT_DATA = 3
ROLE_SFT_DATA = 4
ROLE_HELDOUT = 5
ROLE_EVAL_PROMPTS = 10


def derive_rng(seed: int, role: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(role,)))


@dataclass(frozen=True)
class TokenSample:
    tokens: np.ndarray  # full sequence including specials
    first_target: int  # first index whose prediction carries loss
    kind: str

    def __post_init__(self):
        if not (1 <= self.first_target < len(self.tokens)):
            raise ValueError("first_target must point inside the sequence")


class MarkovLanguage:
    """Order-2 Markov chain over a half-open token range.

    The full table is a sharp first-order backbone (Dirichlet rows) with a
    multiplicative modulation keyed on the token two steps back, echoing how
    natural text couples strongly to the immediately preceding token and
    more weakly to older context. Every row sums to 1 within 1e-12.
    """

    def __init__(
        self,
        token_range: Tuple[int, int],
        alpha: float,
        rng: np.random.Generator,
        order2_strength: float = 0.5,
    ):
        self.lo, self.hi = token_range
        size = self.hi - self.lo
        # Uniform start gives trajectory diversity even when transition rows
        # are sharp; structure lives in the conditionals, not the opening.
        self.initial = self._normalize(np.full(size, 1.0 / size))
        self.first_order = self._normalize(rng.dirichlet(np.full(size, alpha), size=size))
        modulation = np.exp(order2_strength * rng.standard_normal((size, size)))
        # second_order[p2, p1, next] = first_order[p1, next] * modulation[p2, next]
        self.second_order = self._normalize(
            self.first_order[np.newaxis, :, :] * modulation[:, np.newaxis, :]
        )

    @staticmethod
    def _normalize(table: np.ndarray) -> np.ndarray:
        table = table / table.sum(axis=-1, keepdims=True)
        assert np.all(np.abs(table.sum(axis=-1) - 1.0) <= 1e-12)
        return table

    @property
    def size(self) -> int:
        return self.hi - self.lo

    def _draw(self, row: np.ndarray, rng: np.random.Generator) -> int:
        cum = np.cumsum(row)
        idx = int(np.searchsorted(cum, rng.random(), side="right"))
        return min(idx, self.size - 1)

    def sample(self, length: int, rng: np.random.Generator) -> np.ndarray:
        """Draw `length` content tokens (no specials)."""
        out = np.empty(length, dtype=np.int64)
        prev2 = prev1 = -1
        for i in range(length):
            if i == 0:
                row = self.initial
            elif i == 1:
                row = self.first_order[prev1]
            else:
                row = self.second_order[prev2, prev1]
            nxt = self._draw(row, rng)
            out[i] = self.lo + nxt
            prev2, prev1 = prev1, nxt
        return out

    def sequence_loglik(self, content: Sequence[int]) -> float:
        """Exact log-probability of a content sequence under this chain."""
        total = 0.0
        prev2 = prev1 = -1
        for i, token in enumerate(content):
            idx = int(token) - self.lo
            if not (0 <= idx < self.size):
                raise ValueError(f"token {token} outside language range [{self.lo}, {self.hi})")
            if i == 0:
                p = self.initial[idx]
            elif i == 1:
                p = self.first_order[prev1, idx]
            else:
                p = self.second_order[prev2, prev1, idx]
            total += float(np.log(p))
            prev2, prev1 = prev1, idx
        return total

    def entropy_rate_sample(self, sequences: Sequence[np.ndarray]) -> float:
        """Mean per-token cross-entropy of the source on its own samples."""
        total = 0.0
        count = 0
        for seq in sequences:
            total += self.sequence_loglik(seq)
            count += len(seq)
        return -total / count


def build_languages(spec: SyntheticCorpusSpec) -> Tuple[MarkovLanguage, MarkovLanguage]:
    base = MarkovLanguage(
        spec.base_range,
        spec.dirichlet_alpha,
        derive_rng(spec.seed, ROLE_BASE_LANG),
        order2_strength=spec.order2_strength,
    )
    target = MarkovLanguage(
        spec.target_range,
        spec.dirichlet_alpha,
        derive_rng(spec.seed, ROLE_TARGET_LANG),
        order2_strength=spec.order2_strength,
    )
    return base, target


def token_bijection(spec: SyntheticCorpusSpec) -> Dict[int, int]:
    """Seeded one-to-one map base-range -> target-range: the translation
    oracle. The target range may be larger; the map is then a bijection
    onto a seeded subset of it, which still inverts exactly on its image."""
    b_lo, b_hi = spec.base_range
    t_lo, t_hi = spec.target_range
    if b_hi - b_lo > t_hi - t_lo:
        raise ValueError("cross_translation needs the target range at least as large as the base range")
    rng = derive_rng(spec.seed, ROLE_BIJECTION)
    perm = rng.permutation(t_hi - t_lo)[: b_hi - b_lo]
    return {b_lo + i: t_lo + int(perm[i]) for i in range(b_hi - b_lo)}


def invert_bijection(mapping: Dict[int, int]) -> Dict[int, int]:
    return {v: k for k, v in mapping.items()}


def _wrap_monolingual(content: np.ndarray, kind: str) -> TokenSample:
    tokens = np.concatenate(([BOS_ID], content, [EOS_ID]))
    return TokenSample(tokens=tokens.astype(np.int64), first_target=1, kind=kind)


def _wrap_pair(prompt: np.ndarray, response: np.ndarray, kind: str) -> TokenSample:
    tokens = np.concatenate(([BOS_ID], prompt, [SEP_ID], response, [EOS_ID]))
    return TokenSample(
        tokens=tokens.astype(np.int64),
        first_target=len(prompt) + 2,  # first response token
        kind=kind,
    )


def stratified_counts(mixture: Sequence[Tuple[str, float]], n: int) -> List[Tuple[str, int]]:
    """Largest-remainder apportionment; exact for weights like 0.8/0.2."""
    raw = [(kind, weight * n) for kind, weight in mixture]
    counts = [(kind, int(val)) for kind, val in raw]
    short = n - sum(c for _, c in counts)
    by_frac = sorted(
        range(len(raw)), key=lambda i: (-(raw[i][1] - int(raw[i][1])), i)
    )
    out = list(counts)
    for i in by_frac[:short]:
        kind, c = out[i]
        out[i] = (kind, c + 1)
    return out


def _sample_length(spec: SyntheticCorpusSpec, rng: np.random.Generator) -> int:
    lo, hi = spec.seq_len_range
    return int(rng.integers(lo, hi + 1))


def _sample_pair_length(spec: SyntheticCorpusSpec, rng: np.random.Generator) -> int:
    lo, hi = spec.pair_len_range
    return int(rng.integers(lo, hi + 1))


def generate_corpus(
    spec: SyntheticCorpusSpec,
    plan: StagePlan,
    size: Optional[int] = None,
    cross_prompt_len: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> List[TokenSample]:
    """Build the stage dataset.

    CPT emits target-language monolingual sequences only. SFT emits
    prompt/response pairs per its mixture with deterministic stratified
    counts. `cross_prompt_len` pins the translation prompt length (the
    pipeline keeps it inside the model's context window so the bijection is
    actually learnable by a fixed-window predictor).
    """
    base, target = build_languages(spec)
    if plan.stage == "CPT":
        n = size if size is not None else spec.cpt_size
        rng = rng if rng is not None else derive_rng(spec.seed, ROLE_CPT_DATA)
        return [
            _wrap_monolingual(target.sample(_sample_length(spec, rng), rng), "target_monolingual")
            for _ in range(n)
        ]

    n = size if size is not None else spec.sft_size
    rng = rng if rng is not None else derive_rng(spec.seed, ROLE_SFT_DATA)
    needs_cross = any(kind == "cross_translation" and w > 0 for kind, w in plan.mixture)
    mapping = token_bijection(spec) if needs_cross else {}

    samples: List[TokenSample] = []
    for kind, count in stratified_counts(plan.mixture, n):
        for _ in range(count):
            if kind == "target_instruction":
                # Document-length responses keep target-language statistics
                # (including the stop-token rate) aligned with monolingual text.
                prompt = target.sample(_sample_pair_length(spec, rng), rng)
                response = target.sample(_sample_length(spec, rng), rng)
            elif kind == "cross_translation":
                length = cross_prompt_len if cross_prompt_len is not None else _sample_pair_length(spec, rng)
                prompt = base.sample(length, rng)
                response = np.array([mapping[int(t)] for t in prompt], dtype=np.int64)
            elif kind == "anchor_general":
                prompt = base.sample(_sample_pair_length(spec, rng), rng)
                response = base.sample(_sample_pair_length(spec, rng), rng)
            else:
                raise ValueError(f"unsupported SFT task kind {kind!r}")
            samples.append(_wrap_pair(prompt, response, kind))
    return samples


def generate_heldout(spec: SyntheticCorpusSpec, size: Optional[int] = None) -> List[TokenSample]:
    """Held-out target-language monolingual text for perplexity evaluation."""
    _, target = build_languages(spec)
    rng = derive_rng(spec.seed, ROLE_HELDOUT)
    n = size if size is not None else spec.heldout_size
    return [
        _wrap_monolingual(target.sample(_sample_length(spec, rng), rng), "target_monolingual")
        for _ in range(n)
    ]


def generate_translation_prompts(
    spec: SyntheticCorpusSpec, count: int, prompt_len: int
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Held-out (base prompt, target reference) pairs under the bijection."""
    base, _ = build_languages(spec)
    mapping = token_bijection(spec)
    rng = derive_rng(spec.seed, ROLE_EVAL_PROMPTS)
    pairs = []
    for _ in range(count):
        prompt = base.sample(prompt_len, rng)
        reference = np.array([mapping[int(t)] for t in prompt], dtype=np.int64)
        pairs.append((prompt, reference))
    return pairs


def token_label(token: int) -> str:
    """Distinct two-letter label per token id (aa, ab, ... bz, ca ...).

    Labels share no fixed prefix, so character n-gram metrics see the same
    vocabulary separation the token metrics do.
    """
    token = int(token)
    if token < 0 or token >= 26 * 26:
        raise ValueError(f"token id {token} out of label range")
    return chr(97 + token // 26) + chr(97 + token % 26)


def tokens_to_text(tokens: Sequence[int]) -> str:
    """Render tokens as whitespace-separated labels for the text metrics."""
    return " ".join(token_label(t) for t in tokens)
