"""Exhaustive exactness sweeps: posit-8 multiply and Booth recombination."""

from __future__ import annotations

import csv
from bisect import bisect_left
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from . import booth
from .arith import posit_value_n
from .posit import MAXPOS, MINPOS, NAR, iter_sweep, pe_cells_for_mode, posit_value

# every posit-8 value and every 9-bit rounding boundary is a multiple of 2**-28
_SHIFT = 28


@dataclass
class SweepResult:
    name: str
    rows: list[tuple] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


@lru_cache(maxsize=None)
def _oracle_tables() -> tuple[list, list[int]]:
    nums = []
    for c in range(256):
        v = posit_value(c)
        nums.append(None if v is None else int(v * (1 << _SHIFT)))
    # boundary between positive codes c and c+1, at scale 2**56
    bounds = [int(posit_value_n(2 * c + 1, 9) * (1 << _SHIFT)) << _SHIFT for c in range(1, MAXPOS)]
    return nums, bounds


def exact_product(a: int, b: int) -> int:
    """Exact-rational product rounded to posit-8 (ties to even, saturating).

    Operands and boundaries are held as integers at scale 2**-28, so the
    product at scale 2**-56 is exact and every comparison is exact.
    """
    nums, bounds = _oracle_tables()
    na, nb = nums[a & 0xFF], nums[b & 0xFF]
    if na is None or nb is None:
        return NAR
    p = na * nb
    if p == 0:
        return 0
    mag = abs(p)
    i = bisect_left(bounds, mag)
    code = MINPOS + i
    if i < len(bounds) and bounds[i] == mag and code & 1:
        code += 1
    code = min(code, MAXPOS)
    return (-code) & 0xFF if p < 0 else code


def posit_sweep() -> SweepResult:
    """All 65,536 operand pairs against the exact-rational oracle."""
    res = SweepResult("posit_multiply")
    for a, b, got, mode, cells in iter_sweep():
        want = exact_product(a, b)
        res.rows.append((a, b, got, want, mode, cells))
        if got != want:
            res.failures.append(f"posit {a:#04x}*{b:#04x}: got {got:#04x}, want {want:#04x}")
        elif cells != pe_cells_for_mode(mode) or cells != (16, 9, 4)[mode]:
            res.failures.append(f"posit {a:#04x}*{b:#04x}: mode {mode} charged {cells} cells")
    return res


def booth_sweep() -> SweepResult:
    """Every 8-bit operand under both radices must recombine to its value."""
    res = SweepResult("booth_recombination")
    for radix in (booth.RADIX4, booth.RADIX8):
        for x in range(256):
            d = booth.booth_encode(x, radix)
            value = d.value()
            want = booth.to_signed8(x)
            res.rows.append((radix, x, len(d.digits), value, want))
            if value != want:
                res.failures.append(f"booth r{radix} {x:#04x}: recombines to {value}, want {want}")
            elif len(d.digits) != booth.DIGITS[radix]:
                res.failures.append(f"booth r{radix} {x:#04x}: {len(d.digits)} digits")
    return res


POSIT_HEADER = ["a_bits", "b_bits", "result_bits", "oracle_bits", "mode", "pe_cells"]
BOOTH_HEADER = ["radix", "operand", "digits", "recombined", "expected"]


def write_sweep_csv(path: str | Path, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
