import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dspe import merkle, mips
from dspe.errors import ConfigError
from dspe.mips import DecisionKind, HistoryLUT, LazyTree, MipsConfig, MipsEngine, SortedWindow

vecs = hnp.arrays(np.float64, 32, elements=st.floats(-10, 10, width=32))


@pytest.mark.parametrize(
    "data, h", [(b"", 0x811C9DC5), (b"a", 0xE40C292C), (b"foobar", 0xBF9CF968)]
)
def test_fnv1a_reference_vectors(data, h):
    assert merkle.fnv1a32(data) == h


def test_negative_zero_hashes_like_zero():
    assert merkle.canonical_bytes(np.array([-0.0])) == merkle.canonical_bytes(np.array([0.0]))


def test_tree_shape():
    h = merkle.SimHasher(0)
    levels = merkle.build_tree(np.arange(32.0), 8, h)
    assert [len(l) for l in levels] == [8, 4, 2, 1]
    assert merkle.root(levels).start == 0 and merkle.root(levels).stop == 32


def test_odd_node_is_promoted():
    h = merkle.SimHasher(0)
    levels = merkle.build_tree(np.arange(6.0), 3, h)
    assert [len(l) for l in levels] == [3, 2, 1]
    assert levels[1][1].integrity_hash == levels[0][2].integrity_hash


def test_leaf_split_checked():
    with pytest.raises(ValueError):
        merkle.leaf_hashes(np.arange(10.0), 4, merkle.SimHasher())


@given(vecs)
def test_identical_inputs_identical_roots(v):
    a = merkle.build_tree(v, 8, merkle.SimHasher(5))
    b = merkle.build_tree(v.copy(), 8, merkle.SimHasher(5))
    assert merkle.root(a) == merkle.root(b)


@given(vecs, st.integers(0, 31), st.floats(0.5, 5))
def test_single_perturbation_moves_integrity_root(v, i, eps):
    w = v.copy()
    w[i] += eps
    h = merkle.SimHasher(1)
    assert merkle.root(merkle.build_tree(v, 8, h)).integrity_hash != merkle.root(
        merkle.build_tree(w, 8, h)
    ).integrity_hash


def test_simhash_extremes():
    h = merkle.SimHasher(2, bits=32)
    v = np.linspace(-1, 1, 16) + 0.01
    assert merkle.delta_h(h.hash(v), h.hash(v)) == 0
    assert merkle.delta_h(h.hash(v), h.hash(-v)) == 32


def test_simhash_tracks_angle():
    rng = np.random.default_rng(0)
    h = merkle.SimHasher(3, bits=64)
    ham, ang = [], []
    for _ in range(400):
        u = rng.standard_normal(16)
        v = u + rng.uniform(0, 3) * rng.standard_normal(16)
        ham.append(merkle.delta_h(h.hash(u), h.hash(v)))
        ang.append(np.arccos(np.clip(u @ v / np.linalg.norm(u) / np.linalg.norm(v), -1, 1)))
    assert np.corrcoef(ham, ang)[0, 1] > 0.8


def test_hasher_width_checked():
    with pytest.raises(ValueError):
        merkle.SimHasher(bits=0)


# ---- sorter -------------------------------------------------------------------


def test_window_inserts_after_nearest():
    w = SortedWindow(8)
    w.insert(0, np.array([1.0, 0.0]))
    w.insert(1, np.array([0.0, 1.0]))
    w.insert(2, np.array([1.0, 0.1]))
    assert w.order() == [0, 2, 1]
    assert w.last_neighbor == 0
    assert w.cos_cache[(0, 1)] == pytest.approx(0.0)


def test_window_evicts_oldest_and_its_cache():
    w = SortedWindow(2)
    for i in range(3):
        w.insert(i, np.array([1.0, float(i)]))
    assert sorted(w.order()) == [1, 2]
    assert all(0 not in k for k in w.cos_cache)


def test_window_capacity_checked():
    with pytest.raises(ConfigError):
        SortedWindow(0)


# ---- decisions ------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        MipsConfig(t_zero=-1).validate()
    with pytest.raises(ConfigError):
        MipsConfig(d_low=30, leaves=8).validate()


def test_first_token_computes_and_duplicate_skips():
    eng = MipsEngine(16, MipsConfig(d_low=16, leaves=4, t_zero=0, s_th=0, integrity_gate=True))
    x = np.linspace(-1, 1, 16)
    eng.observe(0, x)
    assert eng.decide("attn", 0).kind is DecisionKind.FULL_COMPUTE
    eng.observe(1, x.copy())
    d = eng.decide("attn", 1)
    assert d.kind is DecisionKind.EARLY_SKIP
    assert (d.ref, d.handle, d.level) == (0, 0, 0)


def test_integrity_gate_blocks_hash_collisions():
    cfg = MipsConfig(d_low=16, leaves=4, t_zero=0, s_th=0, integrity_gate=True, hash_bits=1)
    eng = MipsEngine(16, cfg)
    x = np.linspace(-1, 1, 16)
    eng.observe(0, x)
    eng.decide("u", 0)
    # a tiny change keeps the 1-bit sketches but not the bytes
    eng.observe(1, x * (1 + 1e-9))
    assert eng.decide("u", 1).kind is DecisionKind.FULL_COMPUTE
    loose = MipsEngine(16, MipsConfig(d_low=16, leaves=4, t_zero=0, s_th=0, hash_bits=1))
    loose.observe(0, x)
    loose.decide("u", 0)
    loose.observe(1, x * (1 + 1e-9))
    assert loose.decide("u", 1).kind is DecisionKind.EARLY_SKIP


def test_history_lut_enables_diff_reuse():
    cfg = MipsConfig(d_low=16, leaves=4, t_zero=0, s_th=64)
    h = merkle.SimHasher(0, cfg.hash_bits)
    ref = LazyTree(np.linspace(-1, 1, 16), 4, h)
    cur = np.linspace(1, -1, 16) + 0.3
    lut = HistoryLUT()
    d, pending = mips.decide(LazyTree(cur, 4, h), [(7, ref)], lut, cfg)
    assert d.kind is DecisionKind.FULL_COMPUTE and pending
    for lvl, pattern, rid in pending:
        lut.register(lvl, pattern, rid, 11)
    d, _ = mips.decide(LazyTree(cur.copy(), 4, h), [(7, ref)], lut, cfg)
    assert d.kind is DecisionKind.DIFF_REUSE
    assert (d.ref, d.handle) == (7, 11)


def test_history_lut_is_bounded():
    lut = HistoryLUT(capacity=2)
    for i in range(3):
        lut.register(0, i, 0, i)
    assert len(lut) == 2
    assert lut.lookup(0, 0, 0) is None
    assert lut.lookup(0, 2, 0) == 2


def test_engine_charges_hashing_once_per_token():
    eng = MipsEngine(16, MipsConfig(d_low=16, leaves=4))
    eng.observe(0, np.ones(16))
    before = eng.overhead_macs
    eng.decide("a", 0)
    after_one = eng.overhead_macs
    eng.decide("b", 0)
    assert after_one > before
    assert eng.overhead_macs == after_one


def test_audit_agrees_at_exact_settings(tmp_path):
    cfg = MipsConfig(d_low=16, leaves=4, t_zero=0, s_th=0, integrity_gate=True)
    eng = MipsEngine(16, cfg)
    rng = np.random.default_rng(0)
    base = rng.standard_normal((6, 16))
    for t in range(12):
        eng.observe(t, base[t % 6])
        eng.decide("attn", t)
    rep = mips.audit_roots(eng, eng.records)
    assert rep["sample_size"] == 12
    assert rep["kinds"]["EarlySkip"]["n"] == 6
    assert rep["overall_agreement"] == 1.0
    path = tmp_path / "d.csv"
    mips.write_decision_trace(path, eng.records)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["token_id", "expert_id", "level", "delta_h", "decision", "reused_ref"]
    assert len(rows) == 13
