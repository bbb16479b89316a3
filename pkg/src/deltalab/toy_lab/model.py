"""Fixed-window gated-MLP next-token model with exact reverse-mode gradients.

Forward pass: the previous `context_k` token embeddings are concatenated
into one vector x; each block applies a residual gated feed-forward
    x <- x + down_proj @ (sigmoid(gate_proj @ x) * (up_proj @ x))
and lm_head projects to vocabulary logits. Everything runs in f64 so the
finite-difference gradient check can be tight.
"""

from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..tensor_store import Checkpoint, checkpoint_from_arrays
from .config import BOS_ID, EOS_ID, ToyModelConfig
from .corpus import derive_rng

ROLE_MODEL_INIT = 6
ROLE_GRADCHECK = 9

EMBED_NAME = "model.embed_tokens.weight"
LM_HEAD_NAME = "lm_head.weight"

Params = Dict[str, np.ndarray]


def _block_names(i: int) -> Tuple[str, str, str]:
    prefix = f"model.layers.{i}.mlp"
    return (f"{prefix}.gate_proj.weight", f"{prefix}.up_proj.weight", f"{prefix}.down_proj.weight")


def parameter_names(cfg: ToyModelConfig) -> List[str]:
    names = [EMBED_NAME]
    for i in range(cfg.num_blocks):
        names.extend(_block_names(i))
    names.append(LM_HEAD_NAME)
    return names


def init_params(cfg: ToyModelConfig) -> Params:
    """Seeded uniform(-s, s) init with s = 1/sqrt(fan_in); fan_in is the
    input dimension (the trailing axis)."""
    rng = derive_rng(cfg.seed, ROLE_MODEL_INIT)
    kd = cfg.window_dim

    def uniform(shape: Tuple[int, int]) -> np.ndarray:
        s = 1.0 / math.sqrt(shape[1])
        return rng.uniform(-s, s, size=shape)

    params: Params = {EMBED_NAME: uniform((cfg.vocab_size, cfg.embed_dim))}
    for i in range(cfg.num_blocks):
        gate, up, down = _block_names(i)
        params[gate] = uniform((cfg.hidden_dim, kd))
        params[up] = uniform((cfg.hidden_dim, kd))
        params[down] = uniform((kd, cfg.hidden_dim))
    params[LM_HEAD_NAME] = uniform((cfg.vocab_size, kd))
    return params


def build_model(cfg: ToyModelConfig, meta: Optional[Dict[str, str]] = None) -> Checkpoint:
    """Initialize a model and hand it back as a checkpoint so storage and
    analysis share one code path."""
    base_meta = {
        "stage": "base",
        "steps": "0",
        "seed": str(cfg.seed),
        "vocab_size": str(cfg.vocab_size),
        "embed_dim": str(cfg.embed_dim),
        "context_k": str(cfg.context_k),
        "num_blocks": str(cfg.num_blocks),
        "hidden_dim": str(cfg.hidden_dim),
    }
    if meta:
        base_meta.update(meta)
    return checkpoint_from_arrays(init_params(cfg), dtype="F64", meta=base_meta)


def params_from_checkpoint(ckpt: Checkpoint, cfg: ToyModelConfig) -> Params:
    expected = set(parameter_names(cfg))
    found = set(ckpt.tensors)
    if expected != found:
        raise ValueError(
            f"checkpoint does not match config: missing {sorted(expected - found)}, "
            f"unexpected {sorted(found - expected)}"
        )
    params: Params = {}
    for name in parameter_names(cfg):
        rec = ckpt[name]
        params[name] = rec.as_f64().reshape(rec.shape)
    return params


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward(
    params: Params, cfg: ToyModelConfig, contexts: np.ndarray
) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray, np.ndarray]]]:
    """Logits for a batch of context windows, plus the per-block cache
    (block input, sigmoid gate, up projection) needed by backward."""
    emb = params[EMBED_NAME]
    n = contexts.shape[0]
    x = emb[contexts.reshape(-1)].reshape(n, cfg.window_dim)
    cache: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    for i in range(cfg.num_blocks):
        gate_name, up_name, down_name = _block_names(i)
        g = x @ params[gate_name].T
        s = _sigmoid(g)
        u = x @ params[up_name].T
        cache.append((x, s, u))
        x = x + (s * u) @ params[down_name].T
    logits = x @ params[LM_HEAD_NAME].T
    cache.append((x, np.empty(0), np.empty(0)))  # final block input for lm_head grad
    return logits, cache


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grads(
    params: Params, cfg: ToyModelConfig, contexts: np.ndarray, targets: np.ndarray
) -> Tuple[float, Params]:
    """Mean cross-entropy over the batch and exact gradients for every
    parameter tensor."""
    n = contexts.shape[0]
    logits, cache = forward(params, cfg, contexts)
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), targets].mean())

    dlogits = np.exp(logp)
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n

    grads: Params = {}
    x_final = cache[-1][0]
    grads[LM_HEAD_NAME] = dlogits.T @ x_final
    dx = dlogits @ params[LM_HEAD_NAME]

    for i in reversed(range(cfg.num_blocks)):
        gate_name, up_name, down_name = _block_names(i)
        x_in, s, u = cache[i]
        h = s * u
        dh = dx @ params[down_name]
        grads[down_name] = dx.T @ h
        ds = dh * u
        du = dh * s
        dg = ds * s * (1.0 - s)
        grads[up_name] = du.T @ x_in
        grads[gate_name] = dg.T @ x_in
        dx = dx + du @ params[up_name] + dg @ params[gate_name]

    demb = np.zeros_like(params[EMBED_NAME])
    np.add.at(demb, contexts.reshape(-1), dx.reshape(-1, cfg.embed_dim))
    grads[EMBED_NAME] = demb
    return loss, grads


def batch_loss(params: Params, cfg: ToyModelConfig, contexts: np.ndarray, targets: np.ndarray) -> float:
    logits, _ = forward(params, cfg, contexts)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(contexts.shape[0]), targets].mean())


def window_contexts(tokens: Sequence[int], k: int, positions: Sequence[int]) -> np.ndarray:
    """Context windows (left-padded with BOS) for the given target positions."""
    out = np.full((len(positions), k), BOS_ID, dtype=np.int64)
    for row, j in enumerate(positions):
        lo = max(0, j - k)
        ctx = np.asarray(tokens[lo:j], dtype=np.int64)
        out[row, k - len(ctx) :] = ctx
    return out


def token_logliks(
    params: Params, cfg: ToyModelConfig, tokens: np.ndarray, first_target: int = 1
) -> np.ndarray:
    """Natural-log likelihood of each predicted token from `first_target` on."""
    positions = list(range(first_target, len(tokens)))
    if not positions:
        return np.empty(0)
    contexts = window_contexts(tokens, cfg.context_k, positions)
    targets = np.asarray([tokens[j] for j in positions], dtype=np.int64)
    logits, _ = forward(params, cfg, contexts)
    logp = _log_softmax(logits)
    return logp[np.arange(len(positions)), targets]


def greedy_decode(
    params: Params, cfg: ToyModelConfig, prefix: Sequence[int], max_new: int
) -> List[int]:
    """Argmax continuation of `prefix` until EOS or `max_new` tokens.

    Ties resolve to the lowest token id, so decoding is deterministic.
    """
    seq = list(int(t) for t in prefix)
    out: List[int] = []
    for _ in range(max_new):
        contexts = window_contexts(seq, cfg.context_k, [len(seq)])
        logits, _ = forward(params, cfg, contexts)
        nxt = int(np.argmax(logits[0]))
        if nxt == EOS_ID:
            break
        out.append(nxt)
        seq.append(nxt)
    return out


def gradcheck(
    cfg: ToyModelConfig,
    batch_size: int = 8,
    step: float = 1e-5,
    seed: Optional[int] = None,
) -> float:
    """Max relative error between analytic and central finite-difference
    gradients over a random batch; relative error is computed per parameter
    tensor as ||g_a - g_n|| / max(||g_a||, ||g_n||)."""
    if cfg.param_count > 5000:
        raise ValueError(f"gradcheck is for small configs (<= 5000 params), got {cfg.param_count}")
    rng = derive_rng(seed if seed is not None else cfg.seed, ROLE_GRADCHECK)
    params = init_params(cfg)
    contexts = rng.integers(0, cfg.vocab_size, size=(batch_size, cfg.context_k))
    targets = rng.integers(0, cfg.vocab_size, size=batch_size)

    _, analytic = loss_and_grads(params, cfg, contexts, targets)

    worst = 0.0
    for name in parameter_names(cfg):
        tensor = params[name]
        numeric = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        num_flat = numeric.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = batch_loss(params, cfg, contexts, targets)
            flat[idx] = orig - step
            down = batch_loss(params, cfg, contexts, targets)
            flat[idx] = orig
            num_flat[idx] = (up - down) / (2.0 * step)
        ga = analytic[name]
        denom = max(float(np.linalg.norm(ga)), float(np.linalg.norm(numeric)), 1e-12)
        rel = float(np.linalg.norm(ga - numeric)) / denom
        worst = max(worst, rel)
    return worst
