"""Per-component L2 deltas between checkpoint pairs and their summaries.

All accumulation happens in f64 with a fixed per-tensor reduction order, so
a given pair of checkpoints always produces bit-identical profiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .layer_taxonomy import LayerClass, LayerKey, classify
from .tensor_store import Checkpoint

__all__ = [
    "DeltaEntry",
    "DeltaStats",
    "DeltaProfile",
    "ClassAggregate",
    "CorrelationReport",
    "NameSetMismatchError",
    "TensorShapeMismatchError",
    "delta_l2",
    "summarize",
    "top_k",
    "aggregate_by_class",
    "correlate",
    "direction_cosine",
]


class NameSetMismatchError(Exception):
    """Checkpoints or profiles do not cover the same tensor names."""

    def __init__(self, only_a: Sequence[str], only_b: Sequence[str]):
        self.only_a = sorted(only_a)
        self.only_b = sorted(only_b)
        super().__init__(
            f"tensor name sets differ: {len(self.only_a)} only in first "
            f"{self.only_a[:5]}, {len(self.only_b)} only in second {self.only_b[:5]}"
        )


class TensorShapeMismatchError(Exception):
    """A shared tensor name carries different shapes in the two checkpoints."""


@dataclass(frozen=True)
class DeltaEntry:
    key: LayerKey
    norm: float
    # ||delta|| / ||a||, when requested and the base tensor is nonzero
    relative: Optional[float] = None

    @property
    def name(self) -> str:
        return self.key.raw_name


@dataclass(frozen=True)
class DeltaStats:
    mean: float
    median: float
    max: float

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "median": self.median, "max": self.max}


@dataclass
class DeltaProfile:
    """Per-component L2 norm vector for one checkpoint pair.

    Entries are kept in lexicographic name order; `stats` is always
    recomputable from the entries.
    """

    pair_label: str
    entries: List[DeltaEntry]
    stats: DeltaStats
    total_components: int
    # populated only when an intersect-mode diff dropped tensors
    excluded_a: List[str] = field(default_factory=list)
    excluded_b: List[str] = field(default_factory=list)

    def norms(self) -> List[float]:
        return [e.norm for e in self.entries]

    def names(self) -> List[str]:
        return [e.name for e in self.entries]


@dataclass(frozen=True)
class ClassAggregate:
    layer_class: LayerClass
    norm: float  # sqrt of summed squared member norms
    count: int
    mean: float


@dataclass
class CorrelationReport:
    r: Optional[float]
    n: int
    paired_norms: List[Tuple[str, float, float]]
    undefined: bool = False
    note: str = ""


def _stats_from_norms(norms: Sequence[float]) -> DeltaStats:
    if not norms:
        raise ValueError("cannot summarize an empty profile")
    ordered = sorted(norms)
    n = len(ordered)
    mid = n // 2
    if n % 2 == 1:
        median = ordered[mid]
    else:
        median = (ordered[mid - 1] + ordered[mid]) / 2.0
    return DeltaStats(mean=sum(ordered) / n, median=median, max=ordered[-1])


def delta_l2(
    a: Checkpoint,
    b: Checkpoint,
    pair_label: str = "a→b",
    intersect: bool = False,
    relative: bool = False,
) -> DeltaProfile:
    """Per-tensor L2 norm of (b - a), widened to f64 before accumulation.

    Name sets must match exactly unless `intersect` is set, in which case
    the common subset is analyzed and exclusions are reported on the
    profile. Shape mismatches are always an error.
    """
    names_a, names_b = set(a.tensors), set(b.tensors)
    if names_a != names_b:
        if not intersect:
            raise NameSetMismatchError(names_a - names_b, names_b - names_a)
        common = sorted(names_a & names_b)
        excluded_a = sorted(names_a - names_b)
        excluded_b = sorted(names_b - names_a)
    else:
        common = sorted(names_a)
        excluded_a, excluded_b = [], []

    entries: List[DeltaEntry] = []
    for name in common:
        ta, tb = a[name], b[name]
        if ta.shape != tb.shape:
            raise TensorShapeMismatchError(
                f"tensor {name!r}: shape {ta.shape} vs {tb.shape}"
            )
        diff = tb.as_f64() - ta.as_f64()
        norm = math.sqrt(float(np.dot(diff, diff)))
        rel = None
        if relative:
            base = math.sqrt(float(np.dot(ta.as_f64(), ta.as_f64())))
            rel = norm / base if base > 0.0 else None
        entries.append(DeltaEntry(key=classify(name), norm=norm, relative=rel))

    if not entries:
        raise ValueError("no common tensors to compare")
    return DeltaProfile(
        pair_label=pair_label,
        entries=entries,
        stats=_stats_from_norms([e.norm for e in entries]),
        total_components=len(entries),
        excluded_a=excluded_a,
        excluded_b=excluded_b,
    )


def summarize(profile: DeltaProfile) -> DeltaStats:
    """Mean / median / max over entry norms (even-count median = midpoint)."""
    if profile.total_components < 1:
        raise ValueError("cannot summarize an empty profile")
    return _stats_from_norms(profile.norms())


def top_k(profile: DeltaProfile, k: int) -> List[DeltaEntry]:
    """Largest-norm entries, ties broken by ascending name."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(profile.entries, key=lambda e: (-e.norm, e.name))
    return ranked[: min(k, len(ranked))]


def aggregate_by_class(profile: DeltaProfile) -> Dict[LayerClass, ClassAggregate]:
    """Fold entries into per-class {sqrt-of-sum-of-squares, count, mean}."""
    sums: Dict[LayerClass, List[float]] = {}
    for entry in profile.entries:
        sums.setdefault(entry.key.layer_class, []).append(entry.norm)
    out: Dict[LayerClass, ClassAggregate] = {}
    for cls in LayerClass:
        if cls not in sums:
            continue
        norms = sums[cls]
        out[cls] = ClassAggregate(
            layer_class=cls,
            norm=math.sqrt(sum(v * v for v in norms)),
            count=len(norms),
            mean=sum(norms) / len(norms),
        )
    return out


def correlate(p1: DeltaProfile, p2: DeltaProfile, log: bool = False) -> CorrelationReport:
    """Pearson r over the paired per-component norm vectors.

    Zero variance in either vector yields a flagged undefined-r report
    instead of NaN. With `log`, correlates natural-log norms; every norm
    must then be positive.
    """
    names1, names2 = set(p1.names()), set(p2.names())
    if names1 != names2:
        raise NameSetMismatchError(names1 - names2, names2 - names1)
    if len(names1) < 2:
        raise ValueError("correlation needs at least 2 components")

    by_name2 = {e.name: e.norm for e in p2.entries}
    pairs = [(e.name, e.norm, by_name2[e.name]) for e in p1.entries]
    x = np.array([p[1] for p in pairs], dtype=np.float64)
    y = np.array([p[2] for p in pairs], dtype=np.float64)
    if log:
        if np.any(x <= 0.0) or np.any(y <= 0.0):
            raise ValueError("log-mode correlation requires strictly positive norms")
        x, y = np.log(x), np.log(y)

    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.dot(xc, xc))
    sy = float(np.dot(yc, yc))
    if sx == 0.0 or sy == 0.0:
        return CorrelationReport(
            r=None,
            n=len(pairs),
            paired_norms=pairs,
            undefined=True,
            note="undefined: zero variance in at least one norm vector",
        )
    r = float(np.dot(xc, yc)) / math.sqrt(sx * sy)
    r = max(-1.0, min(1.0, r))
    return CorrelationReport(r=r, n=len(pairs), paired_norms=pairs)


def direction_cosine(
    a1: Checkpoint, b1: Checkpoint, a2: Checkpoint, b2: Checkpoint
) -> float:
    """Cosine similarity between two concatenated raw delta directions.

    Extension beyond the norm-vector correlation: compares (b1 - a1) with
    (b2 - a2) element by element over the full parameter space. All four
    checkpoints must share names and shapes.
    """
    for first, second in ((a1, b1), (a1, a2), (a1, b2)):
        if set(first.tensors) != set(second.tensors):
            raise NameSetMismatchError(
                set(first.tensors) - set(second.tensors),
                set(second.tensors) - set(first.tensors),
            )
    dot = 0.0
    sq1 = 0.0
    sq2 = 0.0
    for name in sorted(a1.tensors):
        d1 = b1[name].as_f64() - a1[name].as_f64()
        d2 = b2[name].as_f64() - a2[name].as_f64()
        dot += float(np.dot(d1, d2))
        sq1 += float(np.dot(d1, d1))
        sq2 += float(np.dot(d2, d2))
    if sq1 == 0.0 or sq2 == 0.0:
        raise ValueError("cosine undefined: at least one delta is identically zero")
    return max(-1.0, min(1.0, dot / math.sqrt(sq1 * sq2)))
