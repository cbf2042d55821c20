"""Toy attention + mixture-of-experts model and its reference forward pass.

Each layer is a parallel block ``y = x + MLA(x) + MoE(x)`` with causal
attention over a KV cache that grows by one entry per token.  The attention
scale 1/sqrt(d_k) is folded into the query weights at init, so the score
multiplies are the only ones the datapath sees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .arith import FLOAT, backend
from .errors import ConfigError


@dataclass(frozen=True)
class ModelSpec:
    d_model: int = 64
    heads: int = 4
    d_k: int = 16
    experts: int = 4
    top_k: int = 2
    d_ff: int = 128
    n_layers: int = 1
    seed: int = 0
    # fraction of weights snapped to values whose posit word is mode-2 foldable
    weight_mode2_rate: float = 0.0

    @property
    def d_attn(self) -> int:
        return self.heads * self.d_k

    def validate(self) -> None:
        for name in ("d_model", "heads", "d_k", "experts", "top_k", "d_ff", "n_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.top_k > self.experts:
            raise ConfigError("top-k cannot exceed the expert count")
        if not 0.0 <= self.weight_mode2_rate <= 1.0:
            raise ConfigError("weight_mode2_rate outside [0, 1]")


@dataclass
class LayerWeights:
    w_qkv: np.ndarray  # (d_model, 3 * d_attn), query block pre-scaled
    w_o: np.ndarray  # (d_attn, d_model)
    w_gate: np.ndarray  # (d_model, experts)
    w1: list[np.ndarray]  # experts x (d_model, d_ff)
    w2: list[np.ndarray]  # experts x (d_ff, d_model)

    def matrices(self) -> dict[str, np.ndarray]:
        out = {"qkv": self.w_qkv, "o": self.w_o, "gate": self.w_gate}
        for i, (a, b) in enumerate(zip(self.w1, self.w2)):
            out[f"e{i}.w1"] = a
            out[f"e{i}.w2"] = b
        return out


@dataclass
class ToyModel:
    spec: ModelSpec
    layers: list[LayerWeights]
    _prepared: dict = field(default_factory=dict, repr=False)

    def prepared(self, arith) -> list[LayerWeights]:
        """Weights as seen by a back end (posit: rounded to posit-8 once)."""
        if arith.name not in self._prepared:
            q = arith.quantize
            self._prepared[arith.name] = [
                LayerWeights(
                    q(L.w_qkv), q(L.w_o), q(L.w_gate), [q(w) for w in L.w1], [q(w) for w in L.w2]
                )
                for L in self.layers
            ]
        return self._prepared[arith.name]


def init_model(spec: ModelSpec | None = None) -> ToyModel:
    spec = spec or ModelSpec()
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0x70])
    snap_rng = np.random.default_rng([spec.seed, 0x71])
    d, H = spec.d_model, spec.d_attn

    def mat(rows: int, cols: int) -> np.ndarray:
        w = rng.standard_normal((rows, cols)) / np.sqrt(rows)
        if spec.weight_mode2_rate > 0:
            from .workload import snap_mode2

            mask = snap_rng.random(w.shape) < spec.weight_mode2_rate
            w = np.where(mask, snap_mode2(w), w)
        return w

    layers = []
    for _ in range(spec.n_layers):
        w_qkv = mat(d, 3 * H)
        w_qkv[:, :H] *= 1.0 / np.sqrt(spec.d_k)
        layers.append(
            LayerWeights(
                w_qkv,
                mat(H, d),
                mat(d, spec.experts),
                [mat(d, spec.d_ff) for _ in range(spec.experts)],
                [mat(spec.d_ff, d) for _ in range(spec.experts)],
            )
        )
    return ToyModel(spec, layers)


def split_qkv(row: np.ndarray, d_attn: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return row[:d_attn], row[d_attn : 2 * d_attn], row[2 * d_attn :]


@dataclass
class ForwardTrace:
    outputs: np.ndarray
    gates: list[np.ndarray]  # per layer (T, experts) dense gate weights
    kv_lengths: list[list[int]]  # per layer, cache length after each token
    softmax_rows: list[np.ndarray] = field(default_factory=list)


def reference_forward(model: ToyModel, tokens: np.ndarray, numeric: str = FLOAT.name) -> ForwardTrace:
    """Token-by-token causal pass with a growing KV cache."""
    arith = backend(numeric)
    spec = model.spec
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != spec.d_model:
        raise ConfigError(f"trace of shape {tokens.shape} does not match d_model={spec.d_model}")
    x = arith.quantize(tokens)
    H = spec.d_attn
    gates, kv_lengths, sm_rows = [], [], []
    for W in model.prepared(arith):
        K = np.zeros((0, H))
        V = np.zeros((0, H))
        out = np.zeros_like(x)
        g_layer = np.zeros((x.shape[0], spec.experts))
        lengths = []
        for t in range(x.shape[0]):
            q, k, v = split_qkv(arith.matmul(x[t : t + 1], W.w_qkv)[0], H)
            K = np.vstack([K, k])
            V = np.vstack([V, v])
            lengths.append(K.shape[0])
            c, scores, _ = kernels.attend_heads(arith, q, K, V, spec.heads, spec.d_k)
            sm_rows.extend(arith.softmax(s) for s in scores)
            a = arith.matmul(c[None], W.w_o)[0]
            m, g, _ = kernels.moe(x[t], W.w_gate, list(zip(W.w1, W.w2)), spec.top_k, arith)
            g_layer[t] = g
            out[t] = arith.add(x[t], a, m)
        x = out
        gates.append(g_layer)
        kv_lengths.append(lengths)
    return ForwardTrace(x, gates, kv_lengths, sm_rows)


def demanded_multiplies(spec: ModelSpec, T: int) -> int:
    """Closed-form multiply count of the full forward pass."""
    d, H, E, k, f = spec.d_model, spec.d_attn, spec.experts, spec.top_k, spec.d_ff
    per_token = 3 * d * H + H * d + d * E + k * (2 * d * f) + k * d
    attn = 2 * H * (T * (T + 1) // 2)
    return spec.n_layers * (T * per_token + attn)

