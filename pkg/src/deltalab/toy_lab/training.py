"""Single-threaded training loop: AdamW with linear warmup and cosine decay.

Training is deliberately sequential and seeded end to end, so a (seed,
config, data) triple pins every emitted checkpoint bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..tensor_store import Checkpoint, checkpoint_from_arrays
from .config import StagePlan, ToyModelConfig
from .corpus import TokenSample, derive_rng
from .model import Params, loss_and_grads, parameter_names, params_from_checkpoint, window_contexts

ROLE_SHUFFLE_CPT = 7
ROLE_SHUFFLE_SFT = 8


@dataclass
class WindowDataset:
    contexts: np.ndarray  # (N, k) int64
    targets: np.ndarray  # (N,) int64

    def __len__(self) -> int:
        return len(self.targets)


def build_windows(samples: Sequence[TokenSample], context_k: int) -> WindowDataset:
    """Expand sequences into (context window, target) training examples.

    Only positions at or past each sample's `first_target` are included,
    which is what realizes the all-tokens vs response-only loss masks.
    """
    context_blocks: List[np.ndarray] = []
    target_blocks: List[np.ndarray] = []
    for sample in samples:
        positions = list(range(sample.first_target, len(sample.tokens)))
        if not positions:
            continue
        context_blocks.append(window_contexts(sample.tokens, context_k, positions))
        target_blocks.append(np.asarray([sample.tokens[j] for j in positions], dtype=np.int64))
    if not context_blocks:
        return WindowDataset(
            contexts=np.empty((0, context_k), dtype=np.int64),
            targets=np.empty(0, dtype=np.int64),
        )
    return WindowDataset(
        contexts=np.concatenate(context_blocks, axis=0),
        targets=np.concatenate(target_blocks, axis=0),
    )


def lr_at(step: int, total_steps: int, base_lr: float, warmup_frac: float) -> float:
    """Linear warmup to base_lr, then cosine decay toward zero."""
    warmup = max(1, int(round(warmup_frac * total_steps)))
    if step < warmup:
        return base_lr * (step + 1) / warmup
    if total_steps <= warmup:
        return base_lr
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict."""

    def __init__(self, params: Params, plan: StagePlan):
        opt = plan.optimizer
        self.beta1, self.beta2 = opt.beta1, opt.beta2
        self.eps = opt.eps
        self.weight_decay = opt.weight_decay
        self.t = 0
        self.m: Dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in params.items()}
        self.v: Dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Params, grads: Params, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, theta in params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            theta -= lr * update
            theta -= lr * self.weight_decay * theta


def train_stage(
    start: Checkpoint,
    samples: Sequence[TokenSample],
    plan: StagePlan,
    cfg: ToyModelConfig,
    shuffle_seed: Optional[int] = None,
) -> Tuple[Checkpoint, List[float]]:
    """Train from `start` (left untouched) and return the new checkpoint
    plus per-step mean cross-entropy losses.

    Zero scheduled steps (no epochs or no windows) returns a checkpoint
    equal to the input, metadata included.
    """
    params = params_from_checkpoint(start, cfg)
    windows = build_windows(samples, cfg.context_k)
    steps_per_epoch = math.ceil(len(windows) / plan.batch_size) if len(windows) else 0
    total_steps = plan.epochs * steps_per_epoch

    if total_steps == 0:
        return checkpoint_from_arrays(params, dtype="F64", meta=dict(start.meta)), []

    role = ROLE_SHUFFLE_CPT if plan.stage == "CPT" else ROLE_SHUFFLE_SFT
    rng = derive_rng(shuffle_seed if shuffle_seed is not None else cfg.seed, role)
    optimizer = AdamW(params, plan)

    losses: List[float] = []
    step = 0
    for _ in range(plan.epochs):
        order = rng.permutation(len(windows))
        for lo in range(0, len(windows), plan.batch_size):
            batch = order[lo : lo + plan.batch_size]
            loss, grads = loss_and_grads(params, cfg, windows.contexts[batch], windows.targets[batch])
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss} at step {step} of {plan.stage} "
                    f"(lr={lr_at(step, total_steps, plan.learning_rate, plan.optimizer.warmup_frac):.3g})"
                )
            optimizer.step(params, grads, lr_at(step, total_steps, plan.learning_rate, plan.optimizer.warmup_frac))
            losses.append(loss)
            step += 1

    meta = dict(start.meta)
    meta.update(
        {
            "stage": plan.stage.lower(),
            "steps": str(total_steps),
            "epochs": str(plan.epochs),
            "learning_rate": str(plan.learning_rate),
            "batch_size": str(plan.batch_size),
            "loss_mask": plan.loss_mask,
            "windows": str(len(windows)),
        }
    )
    meta.update(plan.optimizer.to_meta())
    return checkpoint_from_arrays(params, dtype="F64", meta=meta), losses
