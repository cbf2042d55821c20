"""The multi-stage Booth lookup pipeline for 8-lane shared-weight batches."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import booth
from .bn import (
    RADIX8_PATH,
    SCORE_THRESHOLD,
    BNModel,
    bn_classify,
    load_bn,
    redundancy_score,
    select_path,
)
from .booth import RADIX4, RADIX8, BoothCostModel, BoothLUT, Plan
from .ledger import CostLedger

BATCH_WIDTH = 8


@dataclass
class BoothBatch:
    weight: int
    activations: list[int]
    valid_mask: list[bool] = field(default_factory=lambda: [True] * BATCH_WIDTH)

    def __post_init__(self):
        if len(self.activations) != BATCH_WIDTH or len(self.valid_mask) != BATCH_WIDTH:
            raise ValueError(f"a Booth batch holds exactly {BATCH_WIDTH} lanes")


@dataclass(frozen=True)
class MblmConfig:
    r_zero_wgt: int = 0
    r_zero_act: int = 0
    t_match: int = 0
    score_threshold: float = SCORE_THRESHOLD
    lut_capacity: int = 4
    cost: BoothCostModel = field(default_factory=BoothCostModel)


def invalid_detect(batch: BoothBatch, r_zero_wgt: int = 0, r_zero_act: int = 0) -> list[bool]:
    """Valid mask after dropping near-zero weight / activation pairs."""
    if r_zero_wgt < 0 or r_zero_act < 0:
        raise ValueError("near-zero thresholds must be non-negative")
    if abs(booth.to_signed8(batch.weight)) < r_zero_wgt:
        return [False] * BATCH_WIDTH
    return [
        bool(v) and abs(booth.to_signed8(a)) >= r_zero_act
        for a, v in zip(batch.activations, batch.valid_mask)
    ]


def batch_evidence(activations: Sequence[int], valid: Sequence[bool]) -> tuple[float, float]:
    """Mean BS and mean Re-length over adjacent valid requests in arrival order."""
    lanes = [a for a, v in zip(activations, valid) if v]
    if len(lanes) < 2:
        return 1.0, 8.0
    pairs = list(zip(lanes, lanes[1:]))
    bs = sum(booth.bit_similarity(a, b) for a, b in pairs) / len(pairs)
    rl = sum(booth.repeat_length(a, b) for a, b in pairs) / len(pairs)
    return bs, rl


@dataclass(frozen=True)
class BatchPlan:
    """Everything about a batch that depends on activations only."""

    valid: tuple[bool, ...]
    score: float
    path: str
    ranking2: Plan | None
    ranking2_r8: Plan | None
    chosen: Plan
    # replay flags along chosen.order assuming a LUT holding nothing older
    # than this batch
    fresh_replay: tuple[bool, ...]


def plan_batch(
    activations: Sequence[int], valid: Sequence[bool], config: MblmConfig, model: BNModel
) -> BatchPlan:
    acts = [a & 0xFF for a in activations]
    bvm = booth.build_bvm(acts, valid)
    lanes = list(bvm.lanes) if bvm.lanes else [i for i, v in enumerate(valid) if v]
    bs, rl = batch_evidence(acts, valid)
    p_low, p_high = bn_classify(model, bs, rl)
    score = redundancy_score(p_low, p_high, model.r_L, model.r_H)
    path = select_path(score, config.score_threshold)

    def make(radix: int) -> Plan:
        cost = booth.flip_matrix(acts, radix)
        order = booth.greedy_order(lanes, cost, bvm.bv) if bvm.lanes else lanes
        return booth.plan_energy(radix, order, cost, config.cost)

    r4 = make(RADIX4)
    r8 = make(RADIX8) if path == RADIX8_PATH else None
    chosen = booth.compare_and_select(r4, r8)
    replay = [False]
    for prev, cur in zip(chosen.order, chosen.order[1:]):
        replay.append(booth.popcount(acts[prev] ^ acts[cur]) <= config.t_match)
    return BatchPlan(tuple(valid), score, path, r4, r8, chosen, tuple(replay[: len(chosen.order)]))


@dataclass(frozen=True)
class RowSchedule:
    """How one activation batch runs against any single weight.

    Equivalent to ``mblm_execute`` with a Booth-LUT that holds nothing older
    than the batch: a lane replays the product of the lane before it when
    their codes differ in at most ``t_match`` bits.
    """

    plan: BatchPlan
    encoded: tuple[int, ...]
    # per lane: lane whose product it carries, -1 when skipped
    source: tuple[int, ...]
    flips: int

    @property
    def radix(self) -> int:
        return self.plan.chosen.radix


def row_schedule(
    activations: Sequence[int], valid_mask: Sequence[bool], config: MblmConfig, model: BNModel
) -> RowSchedule:
    acts = [a & 0xFF for a in activations]
    valid = [bool(v) and abs(booth.to_signed8(a)) >= config.r_zero_act for a, v in zip(acts, valid_mask)]
    plan = plan_batch(acts, valid, config, model)
    source = [-1] * len(acts)
    encoded: list[int] = []
    for p, lane in enumerate(plan.chosen.order):
        if plan.fresh_replay[p]:
            source[lane] = source[plan.chosen.order[p - 1]]
        else:
            source[lane] = lane
            encoded.append(lane)
    radix = plan.chosen.radix
    flips = sum(booth.digit_flips(acts[a], acts[b], radix) for a, b in zip(encoded, encoded[1:]))
    return RowSchedule(plan, tuple(encoded), tuple(source), flips)


@dataclass
class MblmResult:
    products: list
    plan: BatchPlan
    replayed: list[int]
    skipped: list[int]
    encodings: int
    flips: int
    pp_rows: int
    approx_events: int
    abs_error: float


def mblm_execute(
    batch: BoothBatch,
    config: MblmConfig | None = None,
    ledger: CostLedger | None = None,
    lut: BoothLUT | None = None,
    model: BNModel | None = None,
    multiply: Callable[[int, int], object] | None = None,
    exact: Callable[[int, int], object] | None = None,
) -> MblmResult:
    """Run detect, classify, path select, order, replay/encode and multiply.

    ``multiply`` defaults to the Booth shift-add product of the 8-bit codes
    under the chosen radix; ``exact`` (used for replay error accounting)
    defaults to the integer product.
    """
    config = config or MblmConfig()
    model = model or load_bn()
    lut = lut if lut is not None else BoothLUT(config.lut_capacity, config.t_match)
    valid = invalid_detect(batch, config.r_zero_wgt, config.r_zero_act)
    plan = plan_batch(batch.activations, valid, config, model)
    radix = plan.chosen.radix
    w = batch.weight & 0xFF
    if multiply is None:
        multiply = lambda wt, a: booth.booth_multiply(wt, a, radix)  # noqa: E731
    if exact is None:
        exact = lambda wt, a: booth.to_signed8(wt) * booth.to_signed8(a)  # noqa: E731

    products: list = [0] * BATCH_WIDTH
    skipped = [i for i in range(BATCH_WIDTH) if batch.valid_mask[i] and not valid[i]]
    replayed: list[int] = []
    order = list(plan.chosen.order)
    encoded_seq: list[int] = []
    approx = 0
    err = 0.0
    for p, lane in enumerate(order):
        a = batch.activations[lane] & 0xFF
        nxt = order[p + 1] if p + 1 < len(order) else None
        prev = order[p - 1] if p > 0 else None
        hit = None
        if prev is not None:
            hit = lut.try_replay(booth.vst_slot(prev, lane), w, a)
        elif nxt is not None:
            hit = lut.try_replay(booth.vst_slot(lane, nxt), w, a)
        if hit is not None:
            products[lane] = hit.product
            replayed.append(lane)
            if hit.bv_count:
                approx += 1
                err += abs(float(exact(w, a)) - float(hit.product))
        else:
            products[lane] = multiply(w, a)
            encoded_seq.append(a)
        if nxt is not None:
            lut.update(booth.vst_slot(lane, nxt), w, a, products[lane], p)

    flips = sum(
        booth.digit_flips(x, y, radix) for x, y in zip(encoded_seq, encoded_seq[1:])
    )
    rows = len(encoded_seq) * booth.DIGITS[radix]
    if ledger is not None:
        ledger.charge(
            ops_skipped=len(skipped),
            ops_reused=len(replayed),
            macs=len(encoded_seq),
            booth_encodings=len(encoded_seq),
            booth_digit_flips=flips,
            pp_rows=rows,
            approx_events=approx,
        )
        ledger.add_error(err)
    return MblmResult(products, plan, replayed, skipped, len(encoded_seq), flips, rows, approx, err)


def write_batch_trace(path, rows: Sequence[tuple]) -> None:
    """CSV of (batch id, path, order, flips, replays, skips)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["batch_id", "path", "order", "flips", "replays", "skips"])
        for bid, res in rows:
            w.writerow(
                [
                    bid,
                    res.plan.path,
                    " ".join(str(i) for i in res.plan.chosen.order),
                    res.flips,
                    len(res.replayed),
                    len(res.skipped),
                ]
            )


def synthetic_batches(n: int, seed: int = 0, max_flip: float = 0.5) -> list[list[int]]:
    """Batches of 8 codes drawn around a random base with per-batch bit-flip rate."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        base = int(rng.integers(256))
        p = float(rng.uniform(0.0, max_flip))
        flips = rng.random((BATCH_WIDTH, 8)) < p
        masks = (flips * (1 << np.arange(8))).sum(axis=1)
        out.append([base ^ int(m) for m in masks])
    return out


def oracle_label(activations: Sequence[int], cost: BoothCostModel) -> bool:
    """True when the radix-8 plan beats radix-4 with both orders solved exactly."""
    lanes = list(range(len(activations)))
    energies = {}
    for radix in (RADIX4, RADIX8):
        cm = booth.flip_matrix(activations, radix)
        order, _ = booth.exact_order(lanes, cm)
        energies[radix] = booth.plan_energy(radix, order, cm, cost).energy
    return energies[RADIX8] < energies[RADIX4]


def calibrate_bn(n: int = 2000, seed: int = 0, cost: BoothCostModel | None = None) -> BNModel:
    from .bn import fit_bn

    cost = cost or BoothCostModel()
    batches = synthetic_batches(n, seed)
    evidence = [batch_evidence(b, [True] * BATCH_WIDTH) for b in batches]
    labels = [oracle_label(b, cost) for b in batches]
    return fit_bn(evidence, labels)
