"""Run configuration: one versioned JSON document, defaults for every field.

Precedence, lowest first: dataclass defaults, the JSON file, command-line
flags (``--seed``, ``--out``).  Unknown keys are rejected at every level.
The single ``seed`` drives the trace, the model weights and the MIPS
projection/hyperplanes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .arch import ArchConfig
from .bn import SCORE_THRESHOLD
from .booth import BoothCostModel
from .errors import ConfigError
from .ledger import CostWeights
from .mblm import MblmConfig
from .mips import MipsConfig
from .model import ModelSpec
from .sim import Features
from .workload import TraceSpec

CONFIG_VERSION = 1


@dataclass(frozen=True)
class TraceParams:
    length: int = 64
    similarity: float = 0.8
    duplicate_rate: float = 0.0
    near_zero_rate: float = 0.0
    mode2_rate: float = 0.0


@dataclass(frozen=True)
class ModelParams:
    d_model: int = 64
    heads: int = 4
    d_k: int = 16
    experts: int = 4
    top_k: int = 2
    d_ff: int = 128
    n_layers: int = 1
    weight_mode2_rate: float = 0.0


@dataclass(frozen=True)
class Thresholds:
    t_zero: int = 1
    s_th: int = 4
    integrity_gate: bool = False
    r_zero_wgt: int = 0
    r_zero_act: int = 0
    t_match: int = 0
    score_threshold: float = SCORE_THRESHOLD


EXACT_THRESHOLDS = Thresholds(t_zero=0, s_th=0, integrity_gate=True, r_zero_wgt=0, r_zero_act=0, t_match=0)


@dataclass(frozen=True)
class MipsParams:
    d_low: int = 32
    leaves: int = 8
    hash_bits: int = 32
    lut_capacity: int = 256
    refs: int = 4
    window: int = 256


@dataclass(frozen=True)
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    trace: TraceParams = field(default_factory=TraceParams)
    model: ModelParams = field(default_factory=ModelParams)
    arch: ArchConfig = field(default_factory=ArchConfig)
    features: Features = field(default_factory=lambda: Features(mips=True, mblm=True, dappm=True))
    thresholds: Thresholds = field(default_factory=Thresholds)
    mips: MipsParams = field(default_factory=MipsParams)
    booth_lut_capacity: int = 4
    cost: CostWeights = field(default_factory=CostWeights)
    booth_cost: BoothCostModel = field(default_factory=BoothCostModel)
    bn_model: str | None = None
    out_dir: str = "out"

    # ---- derived component configs ---------------------------------------

    def trace_spec(self) -> TraceSpec:
        t = self.trace
        return TraceSpec(
            self.seed, t.length, self.model.d_model, t.similarity, t.duplicate_rate, t.near_zero_rate, t.mode2_rate
        )

    def model_spec(self) -> ModelSpec:
        return ModelSpec(**asdict(self.model), seed=self.seed)

    def mips_config(self) -> MipsConfig:
        th = self.thresholds
        return MipsConfig(
            t_zero=th.t_zero, s_th=th.s_th, integrity_gate=th.integrity_gate, seed=self.seed, **asdict(self.mips)
        )

    def mblm_config(self) -> MblmConfig:
        th = self.thresholds
        return MblmConfig(
            r_zero_wgt=th.r_zero_wgt,
            r_zero_act=th.r_zero_act,
            t_match=th.t_match,
            score_threshold=th.score_threshold,
            lut_capacity=self.booth_lut_capacity,
            cost=self.booth_cost,
        )

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}; expected {CONFIG_VERSION}")
        self.trace_spec().validate()
        self.model_spec().validate()
        self.arch.validate()
        self.mips_config().validate()
        th = self.thresholds
        for name in ("r_zero_wgt", "r_zero_act", "t_match"):
            if getattr(th, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.booth_lut_capacity < 1:
            raise ConfigError("booth_lut_capacity must be positive")

    # ---- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Short hash of the experiment; the output directory is not part of it."""
        data = self.to_dict()
        data.pop("out_dir")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = _build(cls, data, "config")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        """Read a config file, or the config embedded in a run report."""
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if isinstance(data, dict) and "report_version" in data and "config" in data:
            data = data["config"]
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def override(self, **changes: Any) -> "RunConfig":
        """Apply dotted-path overrides, e.g. ``{"trace.duplicate_rate": 0.5}``."""
        data = self.to_dict()
        for path, value in changes.items():
            node = data
            parts = path.split(".")
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config path {path!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config path {path!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(data)


def _build(cls, data: Any, where: str, base: Any = None):
    """Dataclass from a dict, filling unspecified fields from ``base``."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    base = cls() if base is None else base
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(base, name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}", default)
        else:
            kwargs[name] = _coerce(default, value, f"{where}.{name}")
    return dataclasses.replace(base, **kwargs)


def _coerce(default: Any, value: Any, where: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str) or default is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    return value
