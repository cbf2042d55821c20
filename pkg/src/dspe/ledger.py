"""Event counters for one simulation run."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

COUNTERS = (
    "dram_reads",
    "dram_writes",
    "sram_reads",
    "sram_writes",
    "macs",
    "overhead_macs",
    "booth_digit_flips",
    "booth_encodings",
    "pp_rows",
    "pe_cell_activations",
    "ops_skipped",
    "ops_reused",
    "approx_events",
)


@dataclass
class CostWeights:
    """Per-event energy (pJ-like units) and cycle weights."""

    dram_access: float = 100.0
    sram_access: float = 5.0
    mac: float = 1.0
    digit_flip: float = 0.25
    pp_row: float = 0.5
    pe_cell: float = 0.1
    encoding: float = 0.5
    # cycles: PE-array throughput dominates; memory stalls add on top
    cycles_per_mac: float = 1.0 / 256
    cycles_per_dram: float = 0.5
    cycles_per_sram: float = 1.0 / 64


@dataclass
class CostLedger:
    dram_reads: int = 0
    dram_writes: int = 0
    sram_reads: int = 0
    sram_writes: int = 0
    macs: int = 0
    overhead_macs: int = 0
    booth_digit_flips: int = 0
    booth_encodings: int = 0
    pp_rows: int = 0
    pe_cell_activations: int = 0
    ops_skipped: int = 0
    ops_reused: int = 0
    approx_events: int = 0
    approx_abs_error: float = 0.0

    def charge(self, **events: int) -> None:
        for name, n in events.items():
            if name not in COUNTERS:
                raise KeyError(f"unknown ledger counter {name!r}")
            n = int(n)
            if n < 0:
                raise ValueError(f"negative charge to {name}: {n}")
            setattr(self, name, getattr(self, name) + n)

    def add_error(self, err: float) -> None:
        if err < 0:
            raise ValueError("absolute error must be non-negative")
        self.approx_abs_error += float(err)

    def merge(self, other: "CostLedger") -> None:
        self.charge(**{c: getattr(other, c) for c in COUNTERS})
        self.add_error(other.approx_abs_error)

    @property
    def executed_multiplies(self) -> int:
        return self.macs

    def modeled_energy(self, w: CostWeights) -> float:
        return (
            (self.dram_reads + self.dram_writes) * w.dram_access
            + (self.sram_reads + self.sram_writes) * w.sram_access
            + (self.macs + self.overhead_macs) * w.mac
            + self.booth_digit_flips * w.digit_flip
            + self.pp_rows * w.pp_row
            + self.pe_cell_activations * w.pe_cell
            + self.booth_encodings * w.encoding
        )

    def modeled_cycles(self, w: CostWeights) -> float:
        return (
            (self.macs + self.overhead_macs) * w.cycles_per_mac
            + (self.dram_reads + self.dram_writes) * w.cycles_per_dram
            + (self.sram_reads + self.sram_writes) * w.cycles_per_sram
        )

    def to_dict(self, w: CostWeights | None = None) -> dict:
        d = asdict(self)
        if w is not None:
            d["modeled_energy"] = self.modeled_energy(w)
            d["modeled_cycles"] = self.modeled_cycles(w)
        return d

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]
