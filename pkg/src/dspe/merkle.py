"""Dual-hash Merkle trees over projected token vectors.

Every node carries two 32-bit hashes.  The integrity hash is FNV-1a over the
node's bytes (leaves) or over its children's hashes (parents), so any change
to the input moves the root.  The locality hash is a sign-random-projection
sketch of the node's segment, so the Hamming distance between two locality
hashes tracks the angle between the segments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

FNV_OFFSET = 0x811C9DC5
FNV_PRIME = 0x01000193
MASK32 = 0xFFFFFFFF


def fnv1a32(data: bytes, h: int = FNV_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & MASK32
    return h


def canonical_bytes(segment: np.ndarray) -> bytes:
    # +0.0 and -0.0 are the same value; hash them the same way
    seg = np.asarray(segment, dtype="<f8") + 0.0
    return seg.tobytes()


def mix(left: int, right: int) -> int:
    return fnv1a32(left.to_bytes(4, "little") + right.to_bytes(4, "little"))


class SimHasher:
    """Seeded hyperplanes, one independent set per segment length."""

    def __init__(self, seed: int = 0, bits: int = 32):
        if not 1 <= bits <= 64:
            raise ValueError("locality hash width must be in 1..64")
        self.seed = seed
        self.bits = bits
        self._planes: dict[int, np.ndarray] = {}

    def planes(self, length: int) -> np.ndarray:
        if length not in self._planes:
            rng = np.random.default_rng([self.seed, length, 0x5348])
            self._planes[length] = rng.standard_normal((self.bits, length))
        return self._planes[length]

    def hash(self, segment: np.ndarray) -> int:
        seg = np.asarray(segment, dtype=np.float64)
        dots = self.planes(seg.shape[0]) @ seg
        out = 0
        for j, d in enumerate(dots):
            if d > 0:
                out |= 1 << j
        return out

    def macs(self, length: int) -> int:
        return self.bits * length


@dataclass(frozen=True)
class MerkleNode:
    level: int
    index: int
    integrity_hash: int
    locality_hash: int
    start: int
    stop: int

    def segment(self, vector: np.ndarray) -> np.ndarray:
        return vector[self.start : self.stop]


def leaf_hashes(v_low: np.ndarray, n_leaves: int, hasher: SimHasher) -> list[MerkleNode]:
    v_low = np.asarray(v_low, dtype=np.float64)
    if v_low.ndim != 1 or v_low.shape[0] % n_leaves:
        raise ValueError(f"length {v_low.shape} does not split into {n_leaves} leaves")
    width = v_low.shape[0] // n_leaves
    nodes = []
    for i in range(n_leaves):
        seg = v_low[i * width : (i + 1) * width]
        nodes.append(
            MerkleNode(0, i, fnv1a32(canonical_bytes(seg)), hasher.hash(seg), i * width, (i + 1) * width)
        )
    return nodes


def build_level(children: Sequence[MerkleNode], v_low: np.ndarray, hasher: SimHasher) -> list[MerkleNode]:
    if not children:
        raise ValueError("cannot build a level from no children")
    level = children[0].level + 1
    parents = []
    for i in range(0, len(children) - 1, 2):
        left, right = children[i], children[i + 1]
        seg = v_low[left.start : right.stop]
        parents.append(
            MerkleNode(
                level,
                i // 2,
                mix(left.integrity_hash, right.integrity_hash),
                hasher.hash(seg),
                left.start,
                right.stop,
            )
        )
    if len(children) % 2:
        odd = children[-1]
        parents.append(
            MerkleNode(level, len(children) // 2, odd.integrity_hash, odd.locality_hash, odd.start, odd.stop)
        )
    return parents


def build_tree(v_low: np.ndarray, n_leaves: int, hasher: SimHasher) -> list[list[MerkleNode]]:
    """All levels, leaves first; the last level holds the root alone."""
    levels = [leaf_hashes(v_low, n_leaves, hasher)]
    while len(levels[-1]) > 1:
        levels.append(build_level(levels[-1], v_low, hasher))
    return levels


def root(levels: list[list[MerkleNode]]) -> MerkleNode:
    return levels[-1][0]


def delta_h(h_cur: int, h_ref: int) -> int:
    """Hamming distance between two locality hashes."""
    return bin(h_cur ^ h_ref).count("1")


def level_delta(cur: Sequence[MerkleNode], ref: Sequence[MerkleNode]) -> tuple[int, int, bool]:
    """(worst node distance, concatenated XOR pattern, integrity equal) for one level."""
    if len(cur) != len(ref):
        raise ValueError("levels differ in width")
    worst = 0
    pattern = 0
    same = True
    for i, (c, r) in enumerate(zip(cur, ref)):
        worst = max(worst, delta_h(c.locality_hash, r.locality_hash))
        pattern |= (c.locality_hash ^ r.locality_hash) << (64 * i)
        same = same and c.integrity_hash == r.integrity_hash
    return worst, pattern, same
