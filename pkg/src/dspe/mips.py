"""Similarity sorter, Merkle early decisions, History-LUT reuse and root audit."""

from __future__ import annotations

import csv
import enum
import json
from collections import OrderedDict, deque
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .merkle import MerkleNode, SimHasher, build_level, leaf_hashes, level_delta



def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


class SortedWindow:
    """Bounded window kept in similarity order.

    Each new vector lands right after its most similar resident.  Every
    cosine computed on the way is cached; evicting a vector drops its cache
    entries.
    """

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise ConfigError("window capacity must be positive")
        self.capacity = capacity
        self.entries: list[tuple[int, np.ndarray]] = []
        self.cos_cache: dict[tuple[int, int], float] = {}
        self._arrival: deque[int] = deque()
        self.computed = 0
        self.last_neighbor: int | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def order(self) -> list[int]:
        return [i for i, _ in self.entries]

    def _evict_oldest(self) -> None:
        old = self._arrival.popleft()
        self.entries = [(i, v) for i, v in self.entries if i != old]
        for key in [k for k in self.cos_cache if old in k]:
            del self.cos_cache[key]

    def insert(self, idx: int, v: np.ndarray) -> int:
        v = np.asarray(v, dtype=np.float64)
        if len(self.entries) >= self.capacity:
            self._evict_oldest()
        self._arrival.append(idx)
        self.last_neighbor = None
        nv = float(np.linalg.norm(v))
        if not self.entries or nv == 0.0:
            for j, _ in self.entries:
                self.cos_cache[(min(idx, j), max(idx, j))] = 0.0
            self.entries.append((idx, v))
            return len(self.entries) - 1
        mat = np.stack([e for _, e in self.entries])
        norms = np.linalg.norm(mat, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.where(norms > 0, (mat @ v) / (norms * nv), 0.0)
        cos = np.clip(cos, -1.0, 1.0)
        for (j, _), c in zip(self.entries, cos):
            self.cos_cache[(min(idx, j), max(idx, j))] = float(c)
        self.computed += len(self.entries)
        best = int(np.argmax(cos))
        self.last_neighbor = self.entries[best][0]
        self.entries.insert(best + 1, (idx, v))
        return best + 1


def incremental_insert(window: SortedWindow, idx: int, v: np.ndarray) -> int:
    return window.insert(idx, v)


def make_projection(d_model: int, d_low: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, d_model, d_low, 0x50])
    return rng.standard_normal((d_model, d_low)) / np.sqrt(d_low)


def project_low(v: np.ndarray, P: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != P.shape[0]:
        raise ConfigError(f"vector of length {v.shape} does not match projection {P.shape}")
    return P.T @ v


class DecisionKind(enum.Enum):
    EARLY_SKIP = "EarlySkip"
    DIFF_REUSE = "DiffReuse"
    FULL_COMPUTE = "FullCompute"


@dataclass(frozen=True)
class Decision:
    kind: DecisionKind
    level: int
    delta_h: int
    ref: int | None = None
    # token whose registered result is reused (== ref for EarlySkip)
    handle: int | None = None


@dataclass(frozen=True)
class MipsConfig:
    t_zero: int = 1
    s_th: int = 4
    integrity_gate: bool = False
    d_low: int = 32
    leaves: int = 8
    hash_bits: int = 32
    lut_capacity: int = 256
    refs: int = 4
    window: int = 256
    seed: int = 0

    def validate(self) -> None:
        if self.t_zero < 0 or self.s_th < 0:
            raise ConfigError("MIPS thresholds must be non-negative")
        if self.d_low % self.leaves:
            raise ConfigError("d_low must be divisible by the leaf count")
        if self.refs < 1 or self.lut_capacity < 1:
            raise ConfigError("reference ring and LUT capacity must be positive")


class HistoryLUT:
    """Per-level LRU maps (XOR pattern, reference id) -> registered result."""

    def __init__(self, capacity: int = 256):
        self.capacity = capacity
        self.levels: dict[int, OrderedDict] = {}
        self.clock = 0

    def lookup(self, level: int, pattern: int, ref: int) -> int | None:
        table = self.levels.get(level)
        if table is None or (pattern, ref) not in table:
            return None
        self.clock += 1
        table.move_to_end((pattern, ref))
        handle, _ = table[(pattern, ref)]
        table[(pattern, ref)] = (handle, self.clock)
        return handle

    def register(self, level: int, pattern: int, ref: int, handle: int) -> None:
        table = self.levels.setdefault(level, OrderedDict())
        self.clock += 1
        table[(pattern, ref)] = (handle, self.clock)
        table.move_to_end((pattern, ref))
        while len(table) > self.capacity:
            table.popitem(last=False)

    def __len__(self) -> int:
        return sum(len(t) for t in self.levels.values())


class LazyTree:
    """Merkle levels built on demand; ``built`` counts hashing work done."""

    def __init__(self, v_low: np.ndarray, leaves: int, hasher: SimHasher):
        self.v_low = v_low
        self.hasher = hasher
        self.levels: list[list[MerkleNode]] = [leaf_hashes(v_low, leaves, hasher)]
        self.hash_macs = hasher.macs(v_low.shape[0])

    @property
    def depth(self) -> int:
        n, d = len(self.levels[0]), 1
        while n > 1:
            n = (n + 1) // 2
            d += 1
        return d

    def level(self, i: int) -> list[MerkleNode]:
        while len(self.levels) <= i:
            parents = build_level(self.levels[-1], self.v_low, self.hasher)
            self.hash_macs += sum(
                self.hasher.macs(p.stop - p.start) for p in parents if p.stop - p.start > 0
            )
            self.levels.append(parents)
        return self.levels[i]

    def full(self) -> list[list[MerkleNode]]:
        self.level(self.depth - 1)
        return self.levels


def decide(
    tree: LazyTree,
    refs: Sequence[tuple[int, LazyTree]],
    lut: HistoryLUT,
    config: MipsConfig,
) -> tuple[Decision, list[tuple[int, int, int]]]:
    """Walk the tree bottom-up against the reference snapshots.

    Returns the decision and the (level, pattern, ref) keys a FullCompute
    should register once its result exists.
    """
    if not refs:
        tree.full()
        return Decision(DecisionKind.FULL_COMPUTE, tree.depth - 1, -1), []
    pending = []
    for lvl in range(tree.depth):
        cur = tree.level(lvl)
        best = None
        for rid, rtree in refs:
            dh, pattern, same = level_delta(cur, rtree.level(lvl))
            key = (dh, not same, -rid)
            if best is None or key < best[0]:
                best = (key, rid, dh, pattern, same)
        _, rid, dh, pattern, same = best
        if dh <= config.t_zero and (same or not config.integrity_gate):
            return Decision(DecisionKind.EARLY_SKIP, lvl, dh, rid, rid), []
        if dh > config.s_th:
            tree.full()
            return Decision(DecisionKind.FULL_COMPUTE, lvl, dh, rid), pending
        if dh > config.t_zero:
            handle = lut.lookup(lvl, pattern, rid)
            if handle is not None:
                return Decision(DecisionKind.DIFF_REUSE, lvl, dh, rid, handle), []
            pending.append((lvl, pattern, rid))
    return Decision(DecisionKind.FULL_COMPUTE, tree.depth - 1, dh, rid), pending


@dataclass
class DecisionRecord:
    token: int
    unit: str
    decision: Decision


class UnitState:
    """Reference ring, snapshots and History-LUT owned by one expert/unit."""

    def __init__(self, config: MipsConfig):
        self.ring: deque[int] = deque(maxlen=config.refs)
        self.lut = HistoryLUT(config.lut_capacity)
        # token -> token whose computed result it carries
        self.alias: dict[int, int] = {}


class MipsEngine:
    """Per-stream MIPS state: projection, sorter, and one UnitState per unit."""

    def __init__(self, d_model: int, config: MipsConfig | None = None):
        self.config = config or MipsConfig()
        self.config.validate()
        self.d_model = d_model
        self.P = make_projection(d_model, self.config.d_low, self.config.seed)
        self.hasher = SimHasher(self.config.seed, self.config.hash_bits)
        self.window = SortedWindow(self.config.window)
        self.units: dict[str, UnitState] = {}
        self.trees: dict[int, LazyTree] = {}
        self.records: list[DecisionRecord] = []
        self.neighbor: dict[int, int | None] = {}
        self.overhead_macs = 0
        self._paid: dict[int, int] = {}

    def unit(self, name: str) -> UnitState:
        if name not in self.units:
            self.units[name] = UnitState(self.config)
        return self.units[name]

    def observe(self, token: int, x: np.ndarray) -> LazyTree:
        """Project, hash leaves and slot the token into the sorter."""
        v_low = project_low(x, self.P)
        self.overhead_macs += self.P.size
        tree = LazyTree(v_low, self.config.leaves, self.hasher)
        self.trees[token] = tree
        self.window.insert(token, x)
        self.neighbor[token] = self.window.last_neighbor
        return tree

    def candidates(self, name: str, token: int) -> list[tuple[int, LazyTree]]:
        st = self.unit(name)
        ids = list(st.ring)
        nb = self.neighbor.get(token)
        if nb is not None and nb in st.alias:
            src = st.alias[nb]
            if src not in ids and src in self.trees:
                ids.append(src)
        return [(i, self.trees[i]) for i in ids]

    def decide(self, name: str, token: int) -> Decision:
        tree = self.trees[token]
        st = self.unit(name)
        d, pending = decide(tree, self.candidates(name, token), st.lut, self.config)
        # hashing work is shared by every unit that reads the same tree
        paid = self._paid.get(token, 0)
        self.overhead_macs += tree.hash_macs - paid
        self._paid[token] = tree.hash_macs
        if d.kind is DecisionKind.FULL_COMPUTE:
            for lvl, pattern, rid in pending:
                st.lut.register(lvl, pattern, rid, token)
            st.ring.append(token)
            st.alias[token] = token
        else:
            st.alias[token] = st.alias.get(d.handle, d.handle)
        self.records.append(DecisionRecord(token, name, d))
        return d

    def counts(self) -> dict[str, int]:
        out = {k.value: 0 for k in DecisionKind}
        for r in self.records:
            out[r.decision.kind.value] += 1
        return out


def write_decision_trace(path, records: Iterable[DecisionRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["token_id", "expert_id", "level", "delta_h", "decision", "reused_ref"])
        for r in records:
            d = r.decision
            w.writerow(
                [r.token, r.unit, d.level, d.delta_h, d.kind.value, "" if d.handle is None else d.handle]
            )


def root_verdict(cur: LazyTree, ref: LazyTree, config: MipsConfig) -> DecisionKind | None:
    """What the root alone says: EarlySkip, DiffReuse range, or FullCompute."""
    levels_c, levels_r = cur.full(), ref.full()
    dh, _, same = level_delta(levels_c[-1], levels_r[-1])
    if dh <= config.t_zero and (same or not config.integrity_gate):
        return DecisionKind.EARLY_SKIP
    if config.t_zero < dh <= config.s_th:
        return DecisionKind.DIFF_REUSE
    return DecisionKind.FULL_COMPUTE


def audit_roots(
    engine: MipsEngine,
    sample: Sequence[DecisionRecord],
    recompute: Callable[[DecisionRecord], bool] | None = None,
) -> dict:
    """Rebuild full trees for sampled decisions and compare against root verdicts.

    ``recompute(record)`` may return whether the reused result equals an
    exact recomputation; its rate is reported per kind as ``value_agreement``.
    """
    per = {k.value: {"n": 0, "agree": 0, "value_checked": 0, "value_match": 0} for k in DecisionKind}
    for rec in sample:
        d = rec.decision
        slot = per[d.kind.value]
        slot["n"] += 1
        if d.kind is DecisionKind.FULL_COMPUTE:
            slot["agree"] += 1
        else:
            fresh_cur = LazyTree(engine.trees[rec.token].v_low, engine.config.leaves, engine.hasher)
            fresh_ref = LazyTree(engine.trees[d.ref].v_low, engine.config.leaves, engine.hasher)
            if root_verdict(fresh_cur, fresh_ref, engine.config) is d.kind:
                slot["agree"] += 1
        if recompute is not None and d.kind is not DecisionKind.FULL_COMPUTE:
            slot["value_checked"] += 1
            slot["value_match"] += bool(recompute(rec))
    report = {"sample_size": len(sample), "kinds": {}}
    for kind, s in per.items():
        entry = {"n": s["n"], "agreement": (s["agree"] / s["n"]) if s["n"] else None}
        if s["value_checked"]:
            entry["value_agreement"] = s["value_match"] / s["value_checked"]
        report["kinds"][kind] = entry
    rates = [v["agreement"] for v in report["kinds"].values() if v["agreement"] is not None]
    report["overall_agreement"] = min(rates) if rates else None
    return report


def write_audit_json(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
