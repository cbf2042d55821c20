"""Seeded token traces with controllable temporal similarity.

Generator algorithm (kept stable so traces are reproducible byte for byte):

* Randomness comes from ``numpy.random.Generator(PCG64(seed))``; only its
  ``random()`` doubles are consumed.
* Five independent child streams are spawned from ``SeedSequence(seed)``:
  noise, duplicate coin, duplicate source, zero mask, DA-snap mask.  Keeping
  them separate couples traces that differ only in one rate, e.g. raising
  ``duplicate_rate`` only turns more tokens into copies.
* Standard normals use Box-Muller on pairs of uniforms:
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``.
* Token 0 is pure noise.  Token t >= 1 is ``rho * v[t-1] + sqrt(1 - rho^2) *
  noise``; with probability ``duplicate_rate`` it is instead an exact copy of
  a uniformly chosen earlier token.  Each element is then zeroed with
  probability ``near_zero_rate``.  ``v[t-1]`` is the token as emitted.
* With ``mode2_rate > 0`` each element is, with that probability, replaced by
  the nearest value whose posit-8 word compresses in the 2-bit mode.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .tensorio import encode_tensor, save_tensor



@dataclass(frozen=True)
class TraceSpec:
    seed: int = 0
    length: int = 64
    d_model: int = 64
    similarity: float = 0.8
    duplicate_rate: float = 0.0
    near_zero_rate: float = 0.0
    mode2_rate: float = 0.0

    def validate(self) -> None:
        for name in ("similarity", "duplicate_rate", "near_zero_rate", "mode2_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        if self.length < 1 or self.d_model < 1:
            raise ConfigError("trace length and d_model must be positive")


@dataclass
class WorkloadTrace:
    spec: TraceSpec
    tokens: np.ndarray
    duplicate_of: list[int | None]

    def digest(self) -> str:
        return hashlib.sha256(encode_tensor(self.tokens)).hexdigest()


def _streams(seed: int, n: int = 5) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def box_muller(gen: np.random.Generator, n: int) -> np.ndarray:
    u = gen.random(2 * ((n + 1) // 2)).reshape(-1, 2)
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    z = np.concatenate([r * np.cos(2 * np.pi * u[:, 1]), r * np.sin(2 * np.pi * u[:, 1])])
    return z[:n]


def mode2_values() -> np.ndarray:
    from .posit import decode_posit, detect_mode

    vals = [float(decode_posit(b).value()) for b in range(256) if detect_mode(b)[0] == 2]
    return np.asarray(sorted(vals))


def snap_mode2(x: np.ndarray, grid: np.ndarray | None = None) -> np.ndarray:
    grid = mode2_values() if grid is None else grid
    idx = np.clip(np.searchsorted(grid, x), 1, len(grid) - 1)
    lo, hi = grid[idx - 1], grid[idx]
    return np.where(np.abs(x - lo) <= np.abs(hi - x), lo, hi)


def generate_trace(spec: TraceSpec) -> WorkloadTrace:
    spec.validate()
    T, d = spec.length, spec.d_model
    noise_g, dup_g, src_g, zero_g, snap_g = _streams(spec.seed)
    noise = box_muller(noise_g, T * d).reshape(T, d)
    dup_u = dup_g.random(T)
    src_u = src_g.random(T)
    zero_u = zero_g.random((T, d))
    snap_u = snap_g.random((T, d))
    rho = spec.similarity
    keep = np.sqrt(max(0.0, 1.0 - rho * rho))
    grid = mode2_values() if spec.mode2_rate > 0 else None

    out = np.zeros((T, d))
    dup_of: list[int | None] = [None] * T
    for t in range(T):
        if t > 0 and dup_u[t] < spec.duplicate_rate:
            src = min(int(src_u[t] * t), t - 1)
            dup_of[t] = src
            out[t] = out[src]
            continue
        v = noise[t] if t == 0 else rho * out[t - 1] + keep * noise[t]
        v = np.where(zero_u[t] < spec.near_zero_rate, 0.0, v)
        if grid is not None:
            v = np.where(snap_u[t] < spec.mode2_rate, snap_mode2(v, grid), v)
        out[t] = v
    # canonical binary32 values: what the tensor file stores is what we run
    out = out.astype("<f4").astype(np.float64)
    return WorkloadTrace(spec, out, dup_of)


def write_manifest(path: str | Path, trace: WorkloadTrace, tensor_path: str | Path | None = None) -> dict:
    manifest = {"spec": asdict(trace.spec), "sha256": trace.digest(), "shape": list(trace.tokens.shape)}
    if tensor_path is not None:
        save_tensor(tensor_path, trace.tokens)
        manifest["tensor"] = Path(tensor_path).name
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
