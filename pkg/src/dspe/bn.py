"""Discrete naive-Bayes redundancy classifier that steers the Booth radix."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError

SCORE_THRESHOLD = 0.8
RADIX4_PATH = "radix4"
RADIX8_PATH = "radix8"
# BS bins: [0, .25) [.25, .5) [.5, .75) [.75, 1]
BS_EDGES = (0.25, 0.5, 0.75)
# Re-length bins: 0-1, 2-3, 4-5, 6-8
RL_EDGES = (2, 4, 6)



def bs_bin(bs: float) -> int:
    return int(np.searchsorted(BS_EDGES, bs, side="right"))


def rl_bin(rl: float) -> int:
    return int(np.searchsorted(RL_EDGES, rl, side="right"))


@dataclass
class BNModel:
    prior: tuple[float, float] = (0.5, 0.5)
    cpt_bs: tuple[tuple[float, ...], tuple[float, ...]] = ((0.25,) * 4, (0.25,) * 4)
    cpt_rl: tuple[tuple[float, ...], tuple[float, ...]] = ((0.25,) * 4, (0.25,) * 4)
    r_L: float = 0.2
    r_H: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        rows = [self.prior, *self.cpt_bs, *self.cpt_rl]
        if len(self.prior) != 2 or len(self.cpt_bs) != 2 or len(self.cpt_rl) != 2:
            raise ConfigError("BN model needs a 2-entry prior and two 2x4 tables")
        for row in rows[1:]:
            if len(row) != 4:
                raise ConfigError(f"CPT row must have 4 bins, got {len(row)}")
        for row in rows:
            if any(p < 0 for p in row) or abs(sum(row) - 1.0) > 1e-9:
                raise ConfigError(f"probability row does not sum to 1: {row}")

    def to_json(self) -> dict:
        return {
            "prior": list(self.prior),
            "cpt_bs": [list(r) for r in self.cpt_bs],
            "cpt_rl": [list(r) for r in self.cpt_rl],
            "r_L": self.r_L,
            "r_H": self.r_H,
        }

    @classmethod
    def from_json(cls, d: dict) -> "BNModel":
        unknown = set(d) - {"prior", "cpt_bs", "cpt_rl", "r_L", "r_H"}
        if unknown:
            raise ConfigError(f"unknown BN model keys: {sorted(unknown)}")
        try:
            return cls(
                prior=tuple(d["prior"]),
                cpt_bs=tuple(tuple(r) for r in d["cpt_bs"]),
                cpt_rl=tuple(tuple(r) for r in d["cpt_rl"]),
                r_L=float(d.get("r_L", 0.2)),
                r_H=float(d.get("r_H", 1.0)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed BN model: {exc}") from exc


def load_bn(path: str | Path | None = None) -> BNModel:
    if path is None:
        text = resources.files("dspe.data").joinpath("bn_default.json").read_text()
    else:
        text = Path(path).read_text()
    return BNModel.from_json(json.loads(text))


def save_bn(model: BNModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_json(), indent=2, sort_keys=True) + "\n")


def bn_classify(model: BNModel, bs: float, re_length: float) -> tuple[float, float]:
    """Posterior (P_low, P_high) given binned BS and Re-length evidence."""
    b, r = bs_bin(bs), rl_bin(re_length)
    joint = [model.prior[c] * model.cpt_bs[c][b] * model.cpt_rl[c][r] for c in (0, 1)]
    z = joint[0] + joint[1]
    if z == 0:
        return model.prior[0], model.prior[1]
    return joint[0] / z, joint[1] / z


def redundancy_score(p_low: float, p_high: float, r_L: float = 0.2, r_H: float = 1.0) -> float:
    return r_L * p_low + r_H * p_high


def select_path(score: float, threshold: float = SCORE_THRESHOLD) -> str:
    # equality goes to the extended path
    return RADIX8_PATH if score >= threshold else RADIX4_PATH


def fit_bn(
    evidence: Sequence[tuple[float, float]],
    labels: Sequence[bool],
    r_L: float = 0.2,
    r_H: float = 1.0,
    smoothing: float = 1.0,
) -> BNModel:
    """Frequency-count CPTs with additive smoothing; label True means High."""
    counts_bs = np.full((2, 4), smoothing)
    counts_rl = np.full((2, 4), smoothing)
    prior = np.full(2, smoothing)
    for (bs, rl), high in zip(evidence, labels):
        c = 1 if high else 0
        prior[c] += 1
        counts_bs[c, bs_bin(bs)] += 1
        counts_rl[c, rl_bin(rl)] += 1

    def norm(row):
        row = row / row.sum()
        vals = [round(float(x), 12) for x in row]
        # push rounding residue into the largest bin so rows stay exact
        vals[int(np.argmax(vals))] += 1.0 - sum(vals)
        return tuple(vals)

    return BNModel(
        prior=norm(prior),
        cpt_bs=(norm(counts_bs[0]), norm(counts_bs[1])),
        cpt_rl=(norm(counts_rl[0]), norm(counts_rl[1])),
        r_L=r_L,
        r_H=r_H,
    )
