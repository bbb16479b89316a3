"""Map tensor names to block indices and layer classes.

The default rule table follows the decoder naming family used by Llama/Qwen
style checkpoints (model.embed_tokens.weight, model.layers.<i>.mlp.gate_proj
...). Other naming schemes can be mapped with an override rules file, so no
code change is needed for a new model family.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union


class LayerClass(enum.Enum):
    EMBEDDING = "embedding"
    LM_HEAD = "lm_head"
    ATTN_Q = "attn_q"
    ATTN_K = "attn_k"
    ATTN_V = "attn_v"
    ATTN_O = "attn_o"
    MLP_GATE = "mlp_gate"
    MLP_UP = "mlp_up"
    MLP_DOWN = "mlp_down"
    NORM = "norm"
    OTHER = "other"

    def __str__(self) -> str:
        return self.value


# Applied in order; first match wins. "norm" deliberately comes last among
# the named rules so attention/MLP projections are never shadowed.
DEFAULT_RULES: Tuple[Tuple[str, LayerClass], ...] = (
    (r"embed_tokens", LayerClass.EMBEDDING),
    (r"lm_head", LayerClass.LM_HEAD),
    (r"self_attn\.q_proj", LayerClass.ATTN_Q),
    (r"self_attn\.k_proj", LayerClass.ATTN_K),
    (r"self_attn\.v_proj", LayerClass.ATTN_V),
    (r"self_attn\.o_proj", LayerClass.ATTN_O),
    (r"mlp\.gate_proj", LayerClass.MLP_GATE),
    (r"mlp\.up_proj", LayerClass.MLP_UP),
    (r"mlp\.down_proj", LayerClass.MLP_DOWN),
    (r"norm", LayerClass.NORM),
)

_BLOCK_RE = re.compile(r"(?:^|\.)layers\.(\d+)(?:\.|$)")

RuleTable = Sequence[Tuple[re.Pattern, LayerClass]]

_DEFAULT_COMPILED: Tuple[Tuple[re.Pattern, LayerClass], ...] = tuple(
    (re.compile(pat), cls) for pat, cls in DEFAULT_RULES
)


@dataclass(frozen=True)
class LayerKey:
    """Parsed identity of one tensor name."""

    raw_name: str
    block_index: Optional[int]
    layer_class: LayerClass

    def to_dict(self) -> Dict[str, object]:
        return {
            "name": self.raw_name,
            "class": self.layer_class.value,
            "block": self.block_index,
        }


def load_rules(path: Union[str, Path]) -> List[Tuple[re.Pattern, LayerClass]]:
    """Read an override rule file: one `<regex> <class>` pair per line,
    '#' comments and blank lines ignored, first match wins."""
    rules: List[Tuple[re.Pattern, LayerClass]] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.rsplit(None, 1)
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected '<pattern> <class>'")
        pattern, class_name = parts
        try:
            cls = LayerClass(class_name)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: unknown layer class {class_name!r}") from exc
        rules.append((re.compile(pattern), cls))
    return rules


def classify(name: str, rules: Optional[RuleTable] = None) -> LayerKey:
    """Classify one tensor name. Total: unmatched names become OTHER, never
    an error, and the result depends only on the name itself."""
    if not name:
        raise ValueError("tensor name must be non-empty")
    table = rules if rules is not None else _DEFAULT_COMPILED
    layer_class = LayerClass.OTHER
    for pattern, cls in table:
        if pattern.search(name):
            layer_class = cls
            break
    match = _BLOCK_RE.search(name)
    block_index = int(match.group(1)) if match else None
    return LayerKey(raw_name=name, block_index=block_index, layer_class=layer_class)


def classify_all(names: Iterable[str], rules: Optional[RuleTable] = None) -> List[LayerKey]:
    return [classify(name, rules) for name in names]


def group_by_class(keys: Iterable[LayerKey]) -> Dict[LayerClass, List[LayerKey]]:
    """Partition keys by class; groups appear in enum order and every key
    lands in exactly one group."""
    buckets: Dict[LayerClass, List[LayerKey]] = {cls: [] for cls in LayerClass}
    for key in keys:
        buckets[key.layer_class].append(key)
    return {cls: members for cls, members in buckets.items() if members}
