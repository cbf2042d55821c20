"""Attention, multi-head latent attention and sparse mixture-of-experts kernels."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .arith import FLOAT
from .errors import ConfigError


def attention(Q, K, V, d_k: int, arith=FLOAT, scale: float | None = None):
    """softmax(Q K^T * scale) V with scale = 1/sqrt(d_k) unless given.

    Returns (output, probabilities).
    """
    if d_k <= 0:
        raise ConfigError("d_k must be positive")
    Q, K, V = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in (Q, K, V))
    scale = 1.0 / np.sqrt(d_k) if scale is None else scale
    scores = arith.matmul(Q, K.T)
    if scale != 1.0:
        scores = arith.quantize(scores * scale)
    p = arith.softmax(scores)
    return arith.matmul(p, V), p


def attend_heads(
    arith,
    q: np.ndarray,
    K: np.ndarray,
    V: np.ndarray,
    heads: int,
    d_k: int,
    prefix: Sequence[np.ndarray] | None = None,
):
    """One query row against a KV cache, head by head (scores pre-scaled).

    ``prefix[h]`` holds already known scores for the first keys of head h;
    only the remaining keys are scored.  Returns (concat output, scores per
    head, number of newly computed scores per head).
    """
    out, all_scores = [], []
    fresh = 0
    for h in range(heads):
        sl = slice(h * d_k, (h + 1) * d_k)
        Kh, Vh = K[:, sl], V[:, sl]
        known = prefix[h] if prefix is not None else np.zeros(0)
        known = known[: Kh.shape[0]]
        rest = Kh[known.shape[0] :]
        new = arith.matmul(q[None, sl], rest.T)[0] if rest.shape[0] else np.zeros(0)
        fresh = rest.shape[0]
        s = np.concatenate([known, new])
        p = arith.softmax(s)
        out.append(arith.matmul(p[None], Vh)[0])
        all_scores.append(s)
    return np.concatenate(out), all_scores, fresh


def mla(Q, K, V, heads: int, d_k: int, W_o, arith=FLOAT, scale: float | None = None):
    """Concat(head_1..head_h) W_o, each head attending over the cached K/V."""
    if heads < 1:
        raise ConfigError("need at least one head")
    Q, K, V = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in (Q, K, V))
    outs = []
    for h in range(heads):
        sl = slice(h * d_k, (h + 1) * d_k)
        o, _ = attention(Q[:, sl], K[:, sl], V[:, sl], d_k, arith, scale)
        outs.append(o)
    return arith.matmul(np.concatenate(outs, axis=1), W_o)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def expert_ffn(X, W1, W2, arith=FLOAT) -> np.ndarray:
    return arith.matmul(relu(arith.matmul(np.atleast_2d(X), W1)), W2)


def top_k_gate(logits: np.ndarray, top_k: int, arith=FLOAT) -> tuple[list[int], np.ndarray]:
    """Selected experts (ascending id) and their softmax weights."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 1 <= top_k <= logits.shape[0]:
        raise ConfigError(f"top-k {top_k} outside 1..{logits.shape[0]}")
    # highest logits first, lower id wins ties
    picked = sorted(np.argsort(-logits, kind="stable")[:top_k].tolist())
    return picked, arith.softmax(logits[picked])


def dense_gate(logits: np.ndarray, top_k: int, arith=FLOAT) -> np.ndarray:
    picked, w = top_k_gate(logits, top_k, arith)
    g = np.zeros(logits.shape[0])
    g[picked] = w
    return g


def combine(weights: np.ndarray, outputs: np.ndarray, arith=FLOAT) -> np.ndarray:
    """sum_i weights[i] * outputs[i]; empty selection gives zeros."""
    outputs = np.atleast_2d(outputs)
    if len(weights) == 0:
        return np.zeros(outputs.shape[1])
    return arith.scale_sum(np.asarray(weights), outputs)


def moe(x, W_gate, experts: Sequence[tuple[np.ndarray, np.ndarray]], top_k: int, arith=FLOAT):
    """Sparse mixture of experts for one token.

    Returns (output, dense gate vector, evaluated expert ids).  Experts
    outside the top-k are never evaluated.
    """
    x = np.asarray(x, dtype=np.float64)
    logits = arith.matmul(x[None], W_gate)[0]
    picked, w = top_k_gate(logits, top_k, arith)
    keep = [(i, wi) for i, wi in zip(picked, w) if wi != 0.0]
    ids = [i for i, _ in keep]
    if not ids:
        return np.zeros(x.shape[0]), np.zeros(len(experts)), []
    Y = np.stack([expert_ffn(x, *experts[i], arith=arith)[0] for i in ids])
    g = np.zeros(len(experts))
    g[ids] = [wi for _, wi in keep]
    return combine(np.array([wi for _, wi in keep]), Y, arith), g, ids
