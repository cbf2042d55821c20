"""Buffer hierarchy of the datapath: capacities and LRU residency.

Capacities are in 8-bit words (one posit-8 value per word).  Every buffer
charges SRAM events for hits and fills; misses and dirty evictions are
charged as DRAM traffic.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass, fields
from typing import Hashable

from .errors import ConfigError
from .ledger import CostLedger

KIB = 1024


@dataclass(frozen=True)
class ArchConfig:
    cores: int = 4
    pes_per_core: int = 64
    parameter_buffer: int = 24 * KIB
    weight_buffer: int = 48 * KIB
    q_sram: int = 48 * KIB
    k_sram: int = 48 * KIB
    v_sram: int = 48 * KIB
    input_buffer: int = 32 * KIB
    output_buffer: int = 32 * KIB
    batch_width: int = 8
    # attention heads are spread over cores round-robin
    head_partition: str = "heads"

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and v <= 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.head_partition not in ("heads", "tokens"):
            raise ConfigError(f"unknown head partition {self.head_partition!r}")

    @property
    def pes(self) -> int:
        return self.cores * self.pes_per_core


class LRUBuffer:
    """Word-granular LRU residency with write-back of dirty entries."""

    def __init__(self, name: str, capacity: int, ledger: CostLedger):
        if capacity <= 0:
            raise ConfigError(f"{name} capacity must be positive")
        self.name = name
        self.capacity = capacity
        self.ledger = ledger
        self.entries: OrderedDict[Hashable, tuple[int, bool]] = OrderedDict()
        self.used = 0
        self.hits = 0
        self.misses = 0

    def __contains__(self, key: Hashable) -> bool:
        return key in self.entries

    def _make_room(self, words: int) -> None:
        while self.used + words > self.capacity and self.entries:
            _, (w, dirty) = self.entries.popitem(last=False)
            self.used -= w
            if dirty:
                self.ledger.charge(dram_writes=w)

    def _insert(self, key: Hashable, words: int, dirty: bool) -> bool:
        if words > self.capacity:
            return False
        self._make_room(words)
        self.entries[key] = (words, dirty)
        self.used += words
        return True

    def read(self, key: Hashable, words: int) -> bool:
        """Read ``words``; returns True on a hit."""
        if key in self.entries:
            self.entries.move_to_end(key)
            self.ledger.charge(sram_reads=words)
            self.hits += 1
            return True
        self.misses += 1
        self.ledger.charge(dram_reads=words)
        if self._insert(key, words, dirty=False):
            self.ledger.charge(sram_writes=words, sram_reads=words)
        return False

    def write(self, key: Hashable, words: int) -> None:
        if key in self.entries:
            w, _ = self.entries.pop(key)
            self.used -= w
        if self._insert(key, words, dirty=True):
            self.ledger.charge(sram_writes=words)
        else:
            self.ledger.charge(dram_writes=words)

    def discard(self, key: Hashable) -> None:
        """Drop a dead entry without write-back."""
        if key in self.entries:
            w, _ = self.entries.pop(key)
            self.used -= w

    def clear(self) -> None:
        self.entries.clear()
        self.used = 0

    def flush(self, keep=None) -> None:
        """Write dirty entries back to DRAM and empty the buffer.

        ``keep(key)`` selects which dirty entries are live; the rest are
        dropped as dead intermediates.
        """
        for key, (w, dirty) in self.entries.items():
            if dirty and (keep is None or keep(key)):
                self.ledger.charge(dram_writes=w)
        self.clear()


class ParameterBuffer:
    """Double-buffered per-layer parameter store.

    While layer ``l`` runs from one half, the next layer's parameters are
    prefetched into the other, so each parameter is fetched from DRAM once
    per layer and every later use is an SRAM read.
    """

    def __init__(self, capacity: int, ledger: CostLedger):
        self.half = capacity // 2
        self.ledger = ledger
        self.halves: deque[set[Hashable]] = deque(maxlen=2)

    @property
    def resident(self) -> set[Hashable]:
        return set().union(*self.halves)

    def load_layer(self, params: dict[Hashable, int]) -> set[Hashable]:
        """Prefetch into the idle half; returns the keys that did not fit."""
        loaded: set[Hashable] = set()
        used = 0
        spill = set()
        for key, words in params.items():
            if used + words <= self.half:
                used += words
                loaded.add(key)
                self.ledger.charge(dram_reads=words, sram_writes=words)
            else:
                spill.add(key)
        self.halves.append(loaded)
        return spill

    def read(self, key: Hashable, words: int) -> None:
        if key not in self.resident:
            raise KeyError(f"{key!r} is not resident in the parameter buffer")
        self.ledger.charge(sram_reads=words)
