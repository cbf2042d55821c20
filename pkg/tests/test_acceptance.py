"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the full list is printed in the pytest
terminal summary.
"""

import json
import time
from functools import lru_cache

import numpy as np

from dspe import booth, conformance, reports
from dspe.cli import main
from dspe.config import EXACT_THRESHOLDS, RunConfig
from dspe.merkle import SimHasher, build_tree, delta_h, root
from dspe.model import reference_forward
from dspe.posit import iter_sweep
from dspe.sim import token_cosines

FULL = {"trace.length": 256}
RATES = (0.0, 0.25, 0.5, 0.75)


@lru_cache(maxsize=None)
def experiment(duplicate_rate: float, exact: bool = True):
    cfg = RunConfig(seed=0, thresholds=EXACT_THRESHOLDS if exact else RunConfig().thresholds)
    cfg = cfg.override(**FULL, **{"trace.duplicate_rate": duplicate_rate})
    t0 = time.perf_counter()
    exp = reports.run_experiment(cfg)
    return exp, reports.build_report(exp), time.perf_counter() - t0


def test_posit_multiply_exact(verdict):
    t0 = time.perf_counter()
    res = conformance.posit_sweep()
    dt = time.perf_counter() - t0
    ok = res.ok and len(res.rows) == 65536 and dt < 1.0
    verdict("1 posit exactness", ok, f"{len(res.rows)} pairs, {len(res.failures)} mismatches, {dt:.2f} s")
    assert ok, res.failures[:5]


def test_pe_cells_per_mode(verdict):
    per_mode: dict[int, set] = {0: set(), 1: set(), 2: set()}
    for _, _, _, mode, cells in iter_sweep():
        per_mode[mode].add(cells)
    cfg = RunConfig(seed=0).override(**{"trace.length": 64, "trace.mode2_rate": 1.0, "model.weight_mode2_rate": 1.0})
    pe = reports.build_report(reports.run_experiment(cfg))["pe"]
    ok = (
        per_mode == {0: {16}, 1: {9}, 2: {4}}
        and pe["mode2_fraction"] >= 0.5
        and pe["mean_cells"] <= 11
        and pe["mean_cells"] == pe["analytic_cells"]
    )
    verdict(
        "2 pe cells",
        ok,
        f"modes {dict((m, sorted(c)) for m, c in per_mode.items())}, mode-2 share {pe['mode2_fraction']:.3f}, "
        f"mean cells {pe['mean_cells']:.3f} (analytic {pe['analytic_cells']:.3f})",
    )
    assert ok


def test_booth_recombination(verdict):
    t0 = time.perf_counter()
    res = conformance.booth_sweep()
    dt = time.perf_counter() - t0
    digits = {radix: {r[2] for r in res.rows if r[0] == radix} for radix in (booth.RADIX4, booth.RADIX8)}
    ok = res.ok and len(res.rows) == 512 and digits == {booth.RADIX4: {4}, booth.RADIX8: {3}} and dt < 1.0
    verdict("3 booth correctness", ok, f"{len(res.rows)} encodings, {len(res.failures)} mismatches, digits {digits}, {dt:.3f} s")
    assert ok, res.failures[:5]


def test_ordering_quality_and_work_saved(verdict):
    q = booth.ordering_quality(n=1000, seed=0)
    _, report, _ = experiment(0.4, exact=False)
    frac = report["conservation"]["skip_reuse_fraction"]
    ok = q["never_worse"] == q["batches"] and frac >= 0.30 and report["config"]["thresholds"]["t_match"] == 0
    verdict(
        "4 ordering",
        ok,
        f"never worse {q['never_worse']}/{q['batches']}, optimal fraction {q['optimal_fraction']:.3f} (target 0.70, "
        f"report only), skip+reuse at d=0.4 {frac:.3f}",
    )
    assert ok


def test_mips_soundness_at_exact_settings(verdict):
    exp, report, dt = experiment(0.5)
    ref = reference_forward(exp.model, exp.trace.tokens, "posit8").outputs
    cos = token_cosines(exp.result.outputs, ref)
    T, d = exp.trace.tokens.shape
    ok = T == 256 and d == 64 and np.array_equal(exp.result.outputs, ref) and cos.min() >= 1 - 1e-6 and dt < 30
    verdict("5 mips soundness", ok, f"T={T} d_model={d}, bit-equal {np.array_equal(exp.result.outputs, ref)}, min cosine {cos.min():.9f}, {dt:.1f} s")
    assert ok


def test_mips_savings(verdict):
    reps = {d: experiment(d)[1] for d in RATES}
    r = reps[0.5]
    ratio = r["features_on"]["dram_reads"] / r["baseline"]["dram_reads"]
    skips = [reps[d]["decisions"]["EarlySkip"] for d in RATES]
    ok = ratio <= 0.7 and all(a <= b for a, b in zip(skips, skips[1:]))
    verdict("6 mips savings", ok, f"dram_reads ratio at d=0.5 {ratio:.3f}, EarlySkip over d={list(RATES)}: {skips}")
    assert ok


def test_merkle_tamper(verdict):
    rng = np.random.default_rng(2024)
    h = SimHasher(7)
    changed = identical = 0
    trials = 2000
    for _ in range(trials):
        v = rng.standard_normal(32)
        w = v.copy()
        i = int(rng.integers(32))
        w[i] = np.nextafter(w[i], np.inf) if rng.random() < 0.5 else w[i] + rng.standard_normal()
        a = root(build_tree(v, 8, h))
        identical += a == root(build_tree(v.copy(), 8, h))
        changed += a.integrity_hash != root(build_tree(w, 8, h)).integrity_hash
    rate = changed / trials
    ok = rate >= 0.999 and identical == trials
    verdict("7 merkle integrity", ok, f"{changed}/{trials} tampered roots changed ({rate:.4f}), {identical}/{trials} identical repeats")
    assert ok


def test_simhash_tracks_angle(verdict):
    rng = np.random.default_rng(11)
    cfg = RunConfig()
    h = SimHasher(3, bits=cfg.mips.hash_bits)
    n, d = 10_000, cfg.mips.d_low
    u = rng.standard_normal((n, d))
    v = u + rng.uniform(0, 4, size=(n, 1)) * rng.standard_normal((n, d))
    ham = [delta_h(h.hash(a), h.hash(b)) for a, b in zip(u, v)]
    cos = np.einsum("ij,ij->i", u, v) / np.linalg.norm(u, axis=1) / np.linalg.norm(v, axis=1)
    r = float(np.corrcoef(ham, np.arccos(np.clip(cos, -1, 1)))[0, 1])
    ok = r >= 0.8
    verdict("8 simhash fidelity", ok, f"pearson {r:.4f} over {n} pairs, {h.bits}-bit hash, d={d}")
    assert ok


def test_determinism(verdict, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 4, "trace": {"length": 48, "duplicate_rate": 0.3}}))
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"trace.duplicate_rate": [0.0, 0.5]}))
    out = tmp_path / "o"
    snaps = []
    for _ in range(2):
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["sweep", "--config", str(cfg), "--grid", str(grid), "--out", str(out)]) == 0
        snaps.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    ok = snaps[0] == snaps[1] and {"report.json", "sweep.json", "sweep.csv"} <= set(snaps[0])
    verdict("9 determinism", ok, f"{len(snaps[0])} output files byte-identical across repeats: {snaps[0] == snaps[1]}")
    assert ok


def test_audit_agreement(verdict, tmp_path):
    cfg = RunConfig(seed=3, thresholds=EXACT_THRESHOLDS).override(**{"trace.length": 128, "trace.duplicate_rate": 0.5})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    out = tmp_path / "a"
    assert main(["audit", "--config", str(path), "--out", str(out)]) == 0
    audit = json.loads((out / "audit.json").read_text())
    kinds = {k: (e["n"], e["agreement"], e["value_agreement"]) for k, e in audit["kinds"].items()}
    ok = audit["overall_agreement"] == 1.0 and all(
        n == 0 or (a == 1.0 and v in (1.0, None)) for n, a, v in kinds.values()
    )
    verdict("10 audit", ok, f"overall {audit['overall_agreement']}, per kind (n, root, value) {kinds}")
    assert ok
