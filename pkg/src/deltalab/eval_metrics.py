"""Corpus BLEU, chrF, and perplexity, plus the cross-stage comparison table.

Conventions are declared rather than implied, because low-resource scores
live near zero where every choice matters:

* BLEU is corpus-pooled (counts summed over segments before the geometric
  mean), reported on a 0-1 scale. Orders with no hypothesis n-grams at all
  are skipped from the geometric mean, so identical hyp/ref corpora score
  exactly 1.0 even for very short segments. Zero-match orders get
  exponential smoothing (the k-th zero order counts as 1/(2^k * total)),
  or a hard 0.0 in unsmoothed mode.
* chrF removes all whitespace, scores each segment against its best
  reference, and macro-averages segment F-scores on a 0-100 scale.
* Perplexity pools token counts across documents (token-weighted), never
  document-averaged. Log-likelihoods are natural logs.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

__all__ = [
    "Segment",
    "EvalCorpus",
    "LogLikStream",
    "MetricReport",
    "StageComparison",
    "corpus_bleu",
    "corpus_chrf",
    "perplexity",
    "pooled_perplexity",
    "stage_comparison",
    "read_parallel_corpus",
    "read_loglik_file",
]

LOWER_IS_BETTER = {"perplexity"}


@dataclass(frozen=True)
class Segment:
    hypothesis: str
    references: Tuple[str, ...]

    def __post_init__(self):
        if not self.references:
            raise ValueError("segment needs at least one reference")


@dataclass
class EvalCorpus:
    segments: List[Segment]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("corpus must contain at least one segment")

    def __len__(self) -> int:
        return len(self.segments)


@dataclass
class LogLikStream:
    """Per-token natural-log likelihoods for one document."""

    token_loglik: List[float]

    def __post_init__(self):
        if not self.token_loglik:
            raise ValueError("log-likelihood stream must be non-empty")
        bad = [v for v in self.token_loglik if v > 0.0]
        if bad:
            raise ValueError(f"log-likelihoods must be <= 0, got {bad[:3]}")

    @property
    def token_count(self) -> int:
        return len(self.token_loglik)


@dataclass
class MetricReport:
    metric_name: str
    value: float
    details: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {"metric": self.metric_name, "value": self.value, "details": self.details}


def _tokenize(text: str, mode: str) -> List[str]:
    if mode == "whitespace":
        return text.split()
    if mode == "char":
        # Whitespace is a segment delimiter, not content, in character mode.
        return [ch for ch in text if not ch.isspace()]
    raise ValueError(f"unknown tokenizer mode {mode!r}")


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    corpus: EvalCorpus,
    max_n: int = 4,
    tokenizer: str = "whitespace",
    smoothing: str = "exp",
) -> MetricReport:
    """Corpus BLEU with pooled clipped counts and multi-reference clipping.

    Reference length per segment is the closest to the hypothesis length
    (ties go to the shorter reference).
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if smoothing not in ("exp", "none"):
        raise ValueError(f"unknown smoothing mode {smoothing!r}")

    correct = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0

    for seg in corpus.segments:
        hyp_tokens = _tokenize(seg.hypothesis, tokenizer)
        ref_token_lists = [_tokenize(r, tokenizer) for r in seg.references]
        hyp_len += len(hyp_tokens)

        closest = min(
            (abs(len(r) - len(hyp_tokens)), len(r)) for r in ref_token_lists
        )[1]
        ref_len += closest

        for n in range(1, max_n + 1):
            hyp_ngrams = _ngram_counts(hyp_tokens, n)
            total[n - 1] += sum(hyp_ngrams.values())
            if not hyp_ngrams:
                continue
            max_ref: Counter = Counter()
            for ref_tokens in ref_token_lists:
                for gram, count in _ngram_counts(ref_tokens, n).items():
                    if count > max_ref[gram]:
                        max_ref[gram] = count
            correct[n - 1] += sum(
                min(count, max_ref[gram]) for gram, count in hyp_ngrams.items()
            )

    precisions: List[Optional[float]] = [None] * max_n
    zero_orders = 0
    log_sum = 0.0
    effective = 0
    zero_score = False
    for n in range(1, max_n + 1):
        if total[n - 1] == 0:
            continue  # order unreachable for this corpus; skipped, not zeroed
        effective += 1
        if correct[n - 1] == 0:
            if smoothing == "exp":
                zero_orders += 1
                p = 1.0 / (2.0**zero_orders * total[n - 1])
            else:
                p = 0.0
                zero_score = True
        else:
            p = correct[n - 1] / total[n - 1]
        precisions[n - 1] = p
        if p > 0.0:
            log_sum += math.log(p)

    if hyp_len == 0 or effective == 0 or zero_score:
        bleu = 0.0
        bp = 0.0 if hyp_len == 0 else 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    else:
        bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
        bleu = bp * math.exp(log_sum / effective)

    return MetricReport(
        metric_name="bleu",
        value=bleu,
        details={
            "precisions": precisions,
            "brevity_penalty": bp,
            "hyp_len": hyp_len,
            "ref_len": ref_len,
            "max_n": max_n,
            "effective_orders": effective,
            "tokenizer": tokenizer,
            "smoothing": smoothing,
        },
    )


def _strip_whitespace(text: str) -> str:
    return "".join(text.split())


def _segment_chrf(hyp: str, ref: str, char_n: int, beta: float) -> Tuple[float, float, float]:
    """(F*100, P, R) for one hypothesis/reference pair, whitespace removed.

    Orders where neither side has n-grams are skipped; if one side has
    n-grams and the other does not, that order scores zero.
    """
    hyp = _strip_whitespace(hyp)
    ref = _strip_whitespace(ref)
    p_sum = 0.0
    r_sum = 0.0
    effective = 0
    for n in range(1, char_n + 1):
        hyp_ngrams = _ngram_counts(hyp, n)
        ref_ngrams = _ngram_counts(ref, n)
        hyp_total = sum(hyp_ngrams.values())
        ref_total = sum(ref_ngrams.values())
        if hyp_total == 0 and ref_total == 0:
            continue
        effective += 1
        overlap = sum(min(count, ref_ngrams[gram]) for gram, count in hyp_ngrams.items())
        if hyp_total > 0:
            p_sum += overlap / hyp_total
        if ref_total > 0:
            r_sum += overlap / ref_total
    if effective == 0:
        return 0.0, 0.0, 0.0
    precision = p_sum / effective
    recall = r_sum / effective
    if precision + recall == 0.0:
        return 0.0, precision, recall
    b2 = beta * beta
    f = (1.0 + b2) * precision * recall / (b2 * precision + recall)
    return f * 100.0, precision, recall


def corpus_chrf(corpus: EvalCorpus, char_n: int = 6, beta: float = 2.0) -> MetricReport:
    """Macro-averaged chrF: best reference per segment, mean over segments."""
    if char_n < 1:
        raise ValueError("char_n must be >= 1")
    scores: List[float] = []
    precisions: List[float] = []
    recalls: List[float] = []
    for seg in corpus.segments:
        best = max(_segment_chrf(seg.hypothesis, ref, char_n, beta) for ref in seg.references)
        scores.append(best[0])
        precisions.append(best[1])
        recalls.append(best[2])
    value = sum(scores) / len(scores)
    return MetricReport(
        metric_name="chrf",
        value=value,
        details={
            "char_n": char_n,
            "beta": beta,
            "mean_precision": sum(precisions) / len(precisions),
            "mean_recall": sum(recalls) / len(recalls),
            "segments": len(scores),
        },
    )


def perplexity(stream: LogLikStream) -> MetricReport:
    """exp(mean negative log-likelihood) for one document."""
    return pooled_perplexity([stream])


def pooled_perplexity(streams: Sequence[LogLikStream]) -> MetricReport:
    """Token-weighted perplexity over multiple documents."""
    if not streams:
        raise ValueError("need at least one log-likelihood stream")
    # fsum: exactly-rounded accumulation, independent of document order
    total_loglik = math.fsum(v for s in streams for v in s.token_loglik)
    total_tokens = sum(s.token_count for s in streams)
    cross_entropy = -total_loglik / total_tokens
    return MetricReport(
        metric_name="perplexity",
        value=math.exp(cross_entropy),
        details={
            "cross_entropy": cross_entropy,
            "token_count": total_tokens,
            "documents": len(streams),
        },
    )


@dataclass
class StageComparisonRow:
    metric: str
    values: Dict[str, float]
    # one flag per adjacent stage pair: improved / regressed / no change
    flags: List[str]
    last_over_first: Optional[float]

    def to_dict(self) -> Dict[str, object]:
        return {
            "metric": self.metric,
            "values": self.values,
            "flags": self.flags,
            "last_over_first": self.last_over_first,
        }


@dataclass
class StageComparison:
    stages: List[str]
    rows: List[StageComparisonRow]

    def to_dict(self) -> Dict[str, object]:
        return {"stages": self.stages, "rows": [r.to_dict() for r in self.rows]}


def stage_comparison(reports: Mapping[str, Sequence[MetricReport]]) -> StageComparison:
    """One row per metric, one column per stage, with direction-aware
    improved/regressed flags for each adjacent stage pair."""
    stages = list(reports)
    if len(stages) < 1:
        raise ValueError("need at least one stage")

    metric_sets = []
    for stage in stages:
        names = [r.metric_name for r in reports[stage]]
        if len(set(names)) != len(names):
            raise ValueError(f"stage {stage!r} has duplicate metrics {names}")
        metric_sets.append(set(names))
    if any(s != metric_sets[0] for s in metric_sets[1:]):
        raise ValueError(f"inconsistent metric sets across stages: {metric_sets}")

    first_stage_order = [r.metric_name for r in reports[stages[0]]]
    rows: List[StageComparisonRow] = []
    for metric in first_stage_order:
        values = {
            stage: next(r.value for r in reports[stage] if r.metric_name == metric)
            for stage in stages
        }
        lower_better = metric in LOWER_IS_BETTER
        flags: List[str] = []
        for prev, curr in zip(stages, stages[1:]):
            before, after = values[prev], values[curr]
            if after == before:
                flags.append("no change")
            elif (after < before) == lower_better:
                flags.append("improved")
            else:
                flags.append("regressed")
        first, last = values[stages[0]], values[stages[-1]]
        ratio = last / first if first != 0.0 else None
        rows.append(
            StageComparisonRow(metric=metric, values=values, flags=flags, last_over_first=ratio)
        )
    return StageComparison(stages=stages, rows=rows)


def read_parallel_corpus(
    hyp_path: Union[str, Path], ref_paths: Sequence[Union[str, Path]]
) -> EvalCorpus:
    """Line-aligned hypothesis file plus one or more reference files."""
    if not ref_paths:
        raise ValueError("need at least one reference file")
    hyp_lines = Path(hyp_path).read_text(encoding="utf-8").splitlines()
    ref_line_lists = [Path(p).read_text(encoding="utf-8").splitlines() for p in ref_paths]
    for path, lines in zip(ref_paths, ref_line_lists):
        if len(lines) != len(hyp_lines):
            raise ValueError(
                f"line count mismatch: {hyp_path} has {len(hyp_lines)}, {path} has {len(lines)}"
            )
    segments = [
        Segment(hypothesis=hyp, references=tuple(refs[i] for refs in ref_line_lists))
        for i, hyp in enumerate(hyp_lines)
    ]
    return EvalCorpus(segments=segments)


def read_loglik_file(path: Union[str, Path]) -> List[LogLikStream]:
    """One document per line, space-separated natural-log probabilities."""
    streams = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            values = [float(tok) for tok in line.split()]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        streams.append(LogLikStream(token_loglik=values))
    if not streams:
        raise ValueError(f"{path}: no log-likelihood documents found")
    return streams
