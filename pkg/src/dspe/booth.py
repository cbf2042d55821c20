"""Booth recoding, bit-variation statistics and flip-aware batch ordering."""

from __future__ import annotations

import itertools
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

RADIX4 = 4
RADIX8 = 8
OPERAND_WIDTH = 8


def to_signed8(x: int) -> int:
    x &= 0xFF
    return x - 256 if x & 0x80 else x


def popcount(x: int) -> int:
    return bin(x & 0xFFFFFFFFFFFFFFFF).count("1")


@dataclass(frozen=True)
class BoothDigits:
    radix: int
    digits: tuple[int, ...]
    operand_width: int = OPERAND_WIDTH

    def value(self) -> int:
        return sum(d * self.radix**i for i, d in enumerate(self.digits))


def _window_params(radix: int) -> tuple[int, int]:
    if radix == RADIX4:
        return 2, 4
    if radix == RADIX8:
        return 3, 3
    raise ValueError(f"unsupported Booth radix {radix}")


def booth_encode(x: int, radix: int = RADIX4) -> BoothDigits:
    """Overlapping-window Booth recoding of an 8-bit signed operand.

    The operand is sign-extended to 9 bits with an implicit 0 below the LSB.
    Radix 4 reads 3-bit windows at stride 2 (4 digits in -2..2); radix 8 reads
    4-bit windows at stride 3 (3 digits in -4..4).
    """
    stride, ndig = _window_params(radix)
    v = to_signed8(x)

    def bit(i: int) -> int:
        if i < 0:
            return 0
        return (v >> min(i, OPERAND_WIDTH - 1)) & 1

    digits = []
    for i in range(ndig):
        lo = stride * i
        top = lo + stride - 1
        d = -(bit(top) << (stride - 1)) + bit(lo - 1)
        for j in range(stride - 1):
            d += bit(lo + j) << j
        digits.append(d)
    return BoothDigits(radix, tuple(digits))


def digit_control(d: int) -> int:
    """Fixed 4-bit select word driven by one Booth digit: [neg | |d| (3 bits)]."""
    if d == 0:
        return 0
    return (8 if d < 0 else 0) | abs(d)


def _control_table(radix: int) -> np.ndarray:
    _, ndig = _window_params(radix)
    words = np.zeros(256, dtype=np.int64)
    for code in range(256):
        w = 0
        for i, d in enumerate(booth_encode(code, radix).digits):
            w |= digit_control(d) << (4 * i)
        words[code] = w
    return words


def _popcount_array(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    out = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        out += (x & np.uint64(1)).astype(np.int64)
        x = x >> np.uint64(1)
    return out


CONTROL = {r: _control_table(r) for r in (RADIX4, RADIX8)}
# digit-flip cost between consecutive multipliers, indexed by raw 8-bit codes
FLIP_TABLE = {
    r: _popcount_array(CONTROL[r][:, None] ^ CONTROL[r][None, :]) for r in (RADIX4, RADIX8)
}
DIGITS = {RADIX4: 4, RADIX8: 3}
BV_TABLE = _popcount_array(np.arange(256)[:, None] ^ np.arange(256)[None, :])


def digit_flips(a: int, b: int, radix: int) -> int:
    return int(FLIP_TABLE[radix][a & 0xFF, b & 0xFF])


def bit_variation(a: int, b: int) -> int:
    return popcount((a ^ b) & 0xFF)


def bit_similarity(a: int, b: int) -> float:
    return 1.0 - bit_variation(a, b) / 8


def repeat_length(a: int, b: int) -> int:
    """Longest run of aligned bit positions where the two operands agree."""
    agree = ~(a ^ b) & 0xFF
    best = run = 0
    for i in range(OPERAND_WIDTH):
        if (agree >> i) & 1:
            run += 1
            best = max(best, run)
        else:
            run = 0
    return best


# ---------------------------------------------------------------------------
# bit-variation matrix and its simplified triangle


@dataclass
class BitVariationMatrix:
    bv: np.ndarray
    lanes: tuple[int, ...]

    def vst(self) -> dict[tuple[int, int], int]:
        """Strict upper triangle over valid lanes: no swapped pairs, no self pairs."""
        out = {}
        for ia, ib in itertools.combinations(range(len(self.lanes)), 2):
            out[(self.lanes[ia], self.lanes[ib])] = int(self.bv[self.lanes[ia], self.lanes[ib]])
        return out


def build_bvm(activations: Sequence[int], valid: Sequence[bool] | None = None) -> BitVariationMatrix:
    acts = np.asarray([a & 0xFF for a in activations], dtype=np.int64)
    n = len(acts)
    if valid is None:
        valid = [True] * n
    lanes = tuple(i for i in range(n) if valid[i])
    bv = np.zeros((n, n), dtype=np.int64)
    if len(lanes) >= 2:
        idx = np.asarray(lanes)
        bv[np.ix_(idx, idx)] = BV_TABLE[acts[idx][:, None], acts[idx][None, :]]
    return BitVariationMatrix(bv, lanes if len(lanes) >= 2 else ())


def vst_slot(i: int, j: int, n: int = 8) -> int:
    """Index of lane pair {i, j} inside the 28-entry triangle (row-major)."""
    if i == j:
        raise ValueError("self pairs have no triangle slot")
    a, b = (i, j) if i < j else (j, i)
    return a * n - a * (a + 1) // 2 + (b - a - 1)


# ---------------------------------------------------------------------------
# ordering


def flip_matrix(activations: Sequence[int], radix: int) -> np.ndarray:
    acts = np.asarray([a & 0xFF for a in activations], dtype=np.int64)
    return FLIP_TABLE[radix][acts[:, None], acts[None, :]]


def path_cost(order: Sequence[int], cost: np.ndarray) -> int:
    return int(sum(cost[order[i], order[i + 1]] for i in range(len(order) - 1)))


def _two_opt(order: list[int], cost: np.ndarray) -> list[int]:
    n = len(order)
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                if i == 0 and j == n - 1:
                    continue
                # reverse order[i..j]; only the two boundary edges change
                before = (cost[order[i - 1], order[i]] if i > 0 else 0) + (
                    cost[order[j], order[j + 1]] if j < n - 1 else 0
                )
                after = (cost[order[i - 1], order[j]] if i > 0 else 0) + (
                    cost[order[i], order[j + 1]] if j < n - 1 else 0
                )
                if after < before:
                    order[i : j + 1] = order[i : j + 1][::-1]
                    improved = True
    return order


def _relocate(order: list[int], cost: np.ndarray) -> list[int]:
    """Move single lanes to a cheaper position until none helps."""
    best = path_cost(order, cost)
    improved = True
    while improved:
        improved = False
        for i in range(len(order)):
            rest = order[:i] + order[i + 1 :]
            for j in range(len(order)):
                if j == i:
                    continue
                cand = rest[:j] + [order[i]] + rest[j:]
                c = path_cost(cand, cost)
                if c < best:
                    order, best, improved = cand, c, True
                    break
            if improved:
                break
    return order


def _polish(order: list[int], cost: np.ndarray) -> list[int]:
    prev = None
    while prev != order:
        prev = list(order)
        order = _relocate(_two_opt(list(order), cost), cost)
    return order


def greedy_order(lanes: Sequence[int], cost: np.ndarray, bv: np.ndarray) -> list[int]:
    """Nearest-neighbour path from the lane with the least total bit variation.

    The path is polished with 2-opt segment reversals and single-lane
    relocations, and never returned worse than plain arrival order.
    """
    lanes = list(lanes)
    if len(lanes) <= 2:
        return lanes
    totals = [int(sum(bv[i, j] for j in lanes)) for i in lanes]
    start = lanes[int(np.argmin(totals))]
    order = [start]
    left = [l for l in lanes if l != start]
    while left:
        cur = order[-1]
        nxt = min(left, key=lambda l: (cost[cur, l], l))
        order.append(nxt)
        left.remove(nxt)
    order = _polish(order, cost)
    if path_cost(lanes, cost) < path_cost(order, cost):
        return lanes
    return order


_PERMS: dict[int, np.ndarray] = {}


def exact_order(lanes: Sequence[int], cost: np.ndarray) -> tuple[list[int], int]:
    """Minimum-cost Hamiltonian path by enumerating every permutation."""
    lanes = list(lanes)
    n = len(lanes)
    if n <= 1:
        return lanes, 0
    if n not in _PERMS:
        _PERMS[n] = np.asarray(list(itertools.permutations(range(n))), dtype=np.int64)
    perms = _PERMS[n]
    sub = cost[np.ix_(lanes, lanes)]
    totals = sub[perms[:, :-1], perms[:, 1:]].sum(axis=1)
    best = int(np.argmin(totals))
    return [lanes[i] for i in perms[best]], int(totals[best])


def order_batch(
    activations: Sequence[int], valid: Sequence[bool] | None, radix: int
) -> list[int]:
    """ranking2 (radix 4) or ranking2_R8 (radix 8) for one batch."""
    bvm = build_bvm(activations, valid)
    if not bvm.lanes:
        if valid is None:
            return list(range(len(activations)))
        return [i for i, v in enumerate(valid) if v]
    return greedy_order(bvm.lanes, flip_matrix(activations, radix), bvm.bv)


def ordering_quality(n: int = 1000, seed: int = 0, radix: int = RADIX4, width: int = 8) -> dict:
    """Greedy ranking against arrival order and the exact path on random batches."""
    rng = np.random.default_rng(seed)
    never_worse = optimal = 0
    gap = 0
    for _ in range(n):
        acts = [int(a) for a in rng.integers(0, 256, size=width)]
        cost = flip_matrix(acts, radix)
        lanes = list(range(width))
        greedy = path_cost(order_batch(acts, None, radix), cost)
        _, best = exact_order(lanes, cost)
        never_worse += greedy <= path_cost(lanes, cost)
        optimal += greedy == best
        gap += greedy - best
    return {
        "batches": n,
        "never_worse": never_worse,
        "optimal": optimal,
        "optimal_fraction": optimal / n if n else 0.0,
        "mean_gap_flips": gap / n if n else 0.0,
    }


# ---------------------------------------------------------------------------
# plan costing


@dataclass(frozen=True)
class BoothCostModel:
    """Energy weights for comparing execution plans (arbitrary units)."""

    flip_cost: float = 1.0
    # a radix-8 select line fans out to five multiples instead of three
    flip_cost_r8: float = 1.5
    row_cost: float = 1.0
    # radix 8 must precompute the 3x multiple once per shared weight
    hard_multiple_cost: float = 4.0

    def flip_weight(self, radix: int) -> float:
        return self.flip_cost_r8 if radix == RADIX8 else self.flip_cost


@dataclass(frozen=True)
class Plan:
    radix: int
    order: tuple[int, ...]
    flips: int
    pp_rows: int
    energy: float


def plan_energy(
    radix: int, order: Sequence[int], cost: np.ndarray, model: BoothCostModel, n_encoded: int | None = None
) -> Plan:
    flips = path_cost(order, cost)
    n = len(order) if n_encoded is None else n_encoded
    rows = n * DIGITS[radix]
    energy = flips * model.flip_weight(radix) + rows * model.row_cost
    if radix == RADIX8 and n:
        energy += model.hard_multiple_cost
    return Plan(radix, tuple(order), flips, rows, energy)


def compare_and_select(ranking2: Plan | None, ranking2_r8: Plan | None) -> Plan:
    """Pick the cheaper plan; ties go to the regular radix-4 path."""
    if ranking2 is None and ranking2_r8 is None:
        raise ValueError("no plan to choose from")
    if ranking2_r8 is None:
        return ranking2
    if ranking2 is None:
        return ranking2_r8
    return ranking2_r8 if ranking2_r8.energy < ranking2.energy else ranking2


# ---------------------------------------------------------------------------
# Booth-LUT


@dataclass
class BoothLUTEntry:
    vst_slot: int
    weight: int
    activation: int
    bv_pattern: int
    seq_index: int
    product: int | float
    age: int = 0


@dataclass
class LutHit:
    product: int | float
    bv_count: int
    entry: BoothLUTEntry


class BoothLUT:
    """Per-slot LRU table replaying products of previously executed pairs."""

    def __init__(self, capacity_per_slot: int = 4, t_match: int = 0):
        if capacity_per_slot < 1:
            raise ValueError("Booth-LUT capacity must be positive")
        self.capacity = capacity_per_slot
        self.t_match = t_match
        self.slots: dict[int, OrderedDict] = {}
        self.clock = 0

    def try_replay(self, slot: int, weight: int, activation: int) -> LutHit | None:
        table = self.slots.get(slot)
        if not table:
            return None
        best = None
        for key, entry in table.items():
            if entry.weight != weight:
                continue
            pattern = (entry.activation ^ activation) & 0xFF
            cnt = popcount(pattern)
            if cnt <= self.t_match and (best is None or cnt < best[0]):
                best = (cnt, key, entry, pattern)
        if best is None:
            return None
        cnt, key, entry, pattern = best
        table.move_to_end(key)
        self.clock += 1
        entry.age = self.clock
        entry.bv_pattern = pattern
        return LutHit(entry.product, cnt, entry)

    def update(self, slot: int, weight: int, activation: int, product, seq_index: int) -> None:
        table = self.slots.setdefault(slot, OrderedDict())
        key = (weight, activation & 0xFF)
        self.clock += 1
        if key in table:
            table.move_to_end(key)
            e = table[key]
            e.product, e.seq_index, e.age = product, seq_index, self.clock
            return
        table[key] = BoothLUTEntry(slot, weight, activation & 0xFF, 0, seq_index, product, self.clock)
        while len(table) > self.capacity:
            table.popitem(last=False)

    def __len__(self) -> int:
        return sum(len(t) for t in self.slots.values())


def booth_multiply(weight: int, activation: int, radix: int = RADIX4) -> int:
    """Sum of shifted partial products w * d_i * radix**i."""
    w = to_signed8(weight)
    return sum(w * d * radix**i for i, d in enumerate(booth_encode(activation, radix).digits))
