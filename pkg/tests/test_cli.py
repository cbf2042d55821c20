import csv
import json

import pytest

from dspe.cli import main
from dspe.reports import audit_sample

SMALL = {
    "seed": 3,
    "trace": {"length": 16, "duplicate_rate": 0.5},
    "model": {"d_model": 32, "heads": 2, "d_k": 8, "experts": 3, "d_ff": 32},
    "thresholds": {"t_zero": 0, "s_th": 0, "integrity_gate": True},
    "mips": {"d_low": 16},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def test_run_writes_everything_deterministically(tmp_path, cfg_path):
    out = tmp_path / "a"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    names = {"report.json", "metrics.csv", "decisions.csv", "batches.csv", "trace.dspe", "manifest.json"}
    assert {p.name for p in out.iterdir()} == names
    first = {n: (out / n).read_bytes() for n in names}
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert first == {n: (out / n).read_bytes() for n in names}
    report = json.loads(first["report.json"])
    assert report["conservation"]["holds"]
    assert report["fidelity"]["cosine_min"] > 0.5
    # re-running the embedded config reproduces the report
    assert main(["run", "--config", str(out / "report.json"), "--out", str(out)]) == 0
    assert (out / "report.json").read_bytes() == first["report.json"]


def test_decisions_csv_columns(tmp_path, cfg_path):
    out = tmp_path / "o"
    main(["run", "--config", str(cfg_path), "--out", str(out)])
    rows = list(csv.DictReader((out / "decisions.csv").open()))
    assert rows and set(rows[0]) == {"token_id", "expert_id", "level", "delta_h", "decision", "reused_ref"}
    assert {r["decision"] for r in rows} <= {"EarlySkip", "DiffReuse", "FullCompute"}


def test_usage_errors_exit_one_without_output(tmp_path, cfg_path, capsys):
    out = tmp_path / "none"
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(out)]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["audit", "--config", str(cfg_path), "--out", str(out), "--sample-rate", "0"]) == 1
    assert main(["audit", "--config", str(cfg_path), "--out", str(out), "--sample-rate", "1.5"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"trace": {"length": "long"}}))
    assert main(["run", "--config", str(bad), "--out", str(out)]) == 1
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_sweep_point_matches_run(tmp_path, cfg_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"trace.duplicate_rate": [0.5]}))
    assert main(["sweep", "--config", str(cfg_path), "--grid", str(grid), "--out", str(tmp_path / "s")]) == 0
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "r")]) == 0
    sweep = list(csv.reader((tmp_path / "s" / "sweep.csv").open()))
    run = list(csv.reader((tmp_path / "r" / "metrics.csv").open()))
    assert sweep[0][2:] == run[0] and sweep[1][2:] == run[1]


def test_sweep_is_repeatable_and_parallel_safe(tmp_path, cfg_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"trace.duplicate_rate": [0.0, 0.5], "seed": [1, 2]}))
    outs = []
    for i, jobs in enumerate(["1", "2"]):
        out = tmp_path / f"s{i}"
        assert main(["sweep", "--config", str(cfg_path), "--grid", str(grid), "--out", str(out), "--jobs", jobs]) == 0
        outs.append((out / "sweep.csv").read_bytes())
    assert outs[0] == outs[1]
    assert len(outs[0].decode().splitlines()) == 5


@pytest.mark.parametrize("grid", [{}, {"seed": []}, [1, 2], {"trace.nope": [1]}])
def test_bad_grids_exit_one(tmp_path, cfg_path, grid):
    g = tmp_path / "g.json"
    g.write_text(json.dumps(grid))
    out = tmp_path / "s"
    assert main(["sweep", "--config", str(cfg_path), "--grid", str(g), "--out", str(out)]) == 1
    assert not out.exists()


def test_conformance_passes(tmp_path):
    out = tmp_path / "c"
    assert main(["conformance", "--out", str(out)]) == 0
    assert len((out / "posit_sweep.csv").read_text().splitlines()) == 65537
    assert len((out / "booth_sweep.csv").read_text().splitlines()) == 513


def test_audit_full_rate_at_exact_settings(tmp_path, cfg_path):
    out = tmp_path / "a"
    assert main(["audit", "--config", str(cfg_path), "--out", str(out)]) == 0
    audit = json.loads((out / "audit.json").read_text())
    assert audit["sample_size"] == audit["population"] > 0
    assert audit["overall_agreement"] == 1.0


def test_audit_sample_is_seeded():
    a = audit_sample(1000, 0.1, 7)
    assert a.tolist() == audit_sample(1000, 0.1, 7).tolist()
    assert 50 < a.size < 150
    assert audit_sample(10, 1.0, 0).tolist() == list(range(10))


def test_log_level_from_environment(tmp_path, cfg_path, monkeypatch, capsys):
    monkeypatch.setenv("DSPE_LOG", "INFO")
    import logging

    logging.getLogger().handlers.clear()
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 0
    assert "INFO" in capsys.readouterr().err
