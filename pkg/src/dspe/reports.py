"""Paired runs, metrics reports and MIPS audits.

A report is a deterministic JSON document: same config and seed give the
same bytes.  It embeds the fully resolved config so that re-running the
embedded config reproduces it.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .arith import backend
from .bn import load_bn
from .config import RunConfig
from .ledger import CostLedger
from .mips import DecisionKind, DecisionRecord, audit_roots
from .model import ToyModel, demanded_multiplies, init_model
from .sim import RunResult, baseline_run, run_decode, token_cosines
from .tensorio import encode_tensor
from .workload import WorkloadTrace, generate_trace

REPORT_VERSION = 1
log = logging.getLogger(__name__)


@dataclass
class Experiment:
    config: RunConfig
    trace: WorkloadTrace
    model: ToyModel
    baseline: RunResult
    result: RunResult


def run_experiment(cfg: RunConfig) -> Experiment:
    cfg.validate()
    trace = generate_trace(cfg.trace_spec())
    model = init_model(cfg.model_spec())
    log.info("trace %s: T=%d d_model=%d", trace.digest()[:12], *trace.tokens.shape)
    base = baseline_run(model, trace.tokens, cfg.arch, cfg.cost)
    bn = load_bn(cfg.bn_model) if cfg.features.mblm else None
    res = run_decode(model, trace.tokens, cfg.arch, cfg.features, cfg.mips_config(), cfg.mblm_config(), cfg.cost, bn)
    log.info("baseline dram_reads=%d, features-on dram_reads=%d", base.ledger.dram_reads, res.ledger.dram_reads)
    return Experiment(cfg, trace, model, base, res)


def _ratio_saving(on: float, off: float) -> float:
    return 0.0 if off == 0 else 1.0 - on / off


def fidelity(exp: Experiment) -> dict:
    cos = token_cosines(exp.result.outputs, exp.baseline.outputs)
    return {
        "cosine_min": float(cos.min()) if cos.size else 1.0,
        "cosine_mean": float(cos.mean()) if cos.size else 1.0,
        "exact_match": bool(np.array_equal(exp.result.outputs, exp.baseline.outputs)),
        "max_abs_error": float(np.abs(exp.result.outputs - exp.baseline.outputs).max(initial=0.0)),
    }


def build_report(exp: Experiment) -> dict:
    cfg, base, res = exp.config, exp.baseline, exp.result
    w = cfg.cost
    lb, lr = base.ledger, res.ledger
    total = res.demanded
    modes = {str(k): v for k, v in sorted(res.op_mode_counts.items())}
    n_ops = sum(res.op_mode_counts.values())
    savings = {
        "dram_reads": _ratio_saving(lr.dram_reads, lb.dram_reads),
        "dram_total": _ratio_saving(lr.dram_reads + lr.dram_writes, lb.dram_reads + lb.dram_writes),
        "sram_total": _ratio_saving(lr.sram_reads + lr.sram_writes, lb.sram_reads + lb.sram_writes),
        "macs": _ratio_saving(lr.macs, lb.macs),
        "modeled_energy": _ratio_saving(lr.modeled_energy(w), lb.modeled_energy(w)),
        "modeled_cycles": _ratio_saving(lr.modeled_cycles(w), lb.modeled_cycles(w)),
    }
    closed_form = demanded_multiplies(exp.model.spec, exp.trace.tokens.shape[0])
    return {
        "report_version": REPORT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "trace_sha256": exp.trace.digest(),
        "numeric": res.features.numeric,
        "baseline": lb.to_dict(w),
        "features_on": lr.to_dict(w),
        "savings": savings,
        "fidelity": fidelity(exp),
        "decisions": res.decision_counts(),
        "pe": {
            "mean_cells": res.mean_pe_cells(),
            "analytic_cells": res.analytic_pe_cells(),
            "mode_mix": modes,
            "mode2_fraction": res.op_mode_counts.get(2, 0) / n_ops if n_ops else 0.0,
        },
        "conservation": {
            "demanded": total,
            "closed_form": closed_form,
            "executed": lr.macs,
            "skipped": lr.ops_skipped,
            "reused": lr.ops_reused,
            "holds": lr.macs + lr.ops_skipped + lr.ops_reused == total == closed_form,
            "skip_reuse_fraction": (lr.ops_skipped + lr.ops_reused) / total if total else 0.0,
        },
        "batches": {"baseline": base.batches_fired, "features_on": res.batches_fired},
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def metrics_header() -> list[str]:
    counters = list(CostLedger.field_names()) + ["modeled_energy", "modeled_cycles"]
    return (
        ["config_hash", "seed"]
        + counters
        + [f"baseline_{c}" for c in counters]
        + ["cosine_min", "cosine_mean", "exact_match"]
        + [k.value for k in DecisionKind]
    )


def metrics_row(report: dict) -> list:
    counters = list(CostLedger.field_names()) + ["modeled_energy", "modeled_cycles"]
    fid = report["fidelity"]
    return (
        [report["config_hash"], report["seed"]]
        + [report["features_on"][c] for c in counters]
        + [report["baseline"][c] for c in counters]
        + [fid["cosine_min"], fid["cosine_mean"], int(fid["exact_match"])]
        + [report["decisions"][k.value] for k in DecisionKind]
    )


def csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def decisions_csv(res: RunResult) -> str:
    rows = []
    for layer, r in res.decisions:
        d = r.decision
        rows.append(
            [r.token, f"L{layer}.{r.unit}", d.level, d.delta_h, d.kind.value, "" if d.handle is None else d.handle]
        )
    return csv_text(["token_id", "expert_id", "level", "delta_h", "decision", "reused_ref"], rows)


def batches_csv(res: RunResult) -> str:
    rows = [
        [b.batch_id, b.layer, b.matrix, b.row, b.path, " ".join(map(str, b.order)), b.flips, b.replays, b.skips]
        for b in res.batch_rows
    ]
    return csv_text(["batch_id", "layer", "matrix", "row", "path", "order", "flips", "replays", "skips"], rows)


# ---- audit ------------------------------------------------------------------


def audit_sample(n: int, rate: float, seed: int) -> np.ndarray:
    """Seeded Bernoulli sample of record indices; rate 1.0 keeps everything."""
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"sample rate {rate} outside (0, 1]")
    rng = np.random.default_rng([seed, 0xA7])
    return np.nonzero(rng.random(n) < rate)[0]


def value_checker(exp: Experiment):
    """Does a reused/skipped result equal an exact recomputation for the token?"""
    res = exp.result
    arith = backend(res.features.numeric)
    weights = exp.model.prepared(arith)

    def unit_output(layer: int, unit: str, x: np.ndarray) -> np.ndarray:
        W = weights[layer]
        if unit == "attn":
            return arith.matmul(x[None], W.w_qkv)[0]
        if unit == "gate":
            return arith.matmul(x[None], W.w_gate)[0]
        e = int(unit.removeprefix("expert"))
        return kernels.expert_ffn(x, W.w1[e], W.w2[e], arith)[0]

    def check(layer: int, rec: DecisionRecord) -> bool:
        xs = res.layer_inputs[layer]
        mine = unit_output(layer, rec.unit, xs[rec.token])
        reused = unit_output(layer, rec.unit, xs[rec.decision.handle])
        return bool(np.array_equal(mine, reused))

    return check


def audit_experiment(exp: Experiment, sample_rate: float) -> dict:
    """Root-hash audit of a seeded sample of decisions, merged over layers."""
    res = exp.result
    picked = audit_sample(len(res.decisions), sample_rate, exp.config.seed)
    check = value_checker(exp)
    per_layer: dict[int, list[DecisionRecord]] = {}
    for i in picked:
        layer, rec = res.decisions[i]
        per_layer.setdefault(layer, []).append(rec)
    totals = {k.value: {"n": 0, "agree": 0, "checked": 0, "match": 0} for k in DecisionKind}
    for layer, recs in sorted(per_layer.items()):
        sub = audit_roots(res.engines[layer], recs)
        for kind, entry in sub["kinds"].items():
            t = totals[kind]
            t["n"] += entry["n"]
            if entry["n"]:
                t["agree"] += round(entry["agreement"] * entry["n"])
        for r in recs:
            if r.decision.kind is not DecisionKind.FULL_COMPUTE:
                t = totals[r.decision.kind.value]
                t["checked"] += 1
                t["match"] += check(layer, r)
    kinds = {}
    for kind, t in totals.items():
        kinds[kind] = {
            "n": t["n"],
            "agreement": t["agree"] / t["n"] if t["n"] else None,
            "value_checked": t["checked"],
            "value_agreement": t["match"] / t["checked"] if t["checked"] else None,
        }
    rates = [v for e in kinds.values() for v in (e["agreement"], e["value_agreement"]) if v is not None]
    return {
        "report_version": REPORT_VERSION,
        "config": exp.config.to_dict(),
        "config_hash": exp.config.digest(),
        "seed": exp.config.seed,
        "sample_rate": sample_rate,
        "population": len(res.decisions),
        "sample_size": int(picked.size),
        "kinds": kinds,
        "overall_agreement": min(rates) if rates else None,
    }


# ---- output files ------------------------------------------------------------


def run_outputs(exp: Experiment, report: dict) -> dict[str, bytes]:
    """Every file a single run writes, keyed by file name."""
    manifest = {
        "spec": asdict(exp.config.trace_spec()),
        "sha256": exp.trace.digest(),
        "tensor": "trace.dspe",
        "shape": list(exp.trace.tokens.shape),
    }
    return {
        "report.json": dumps_report(report).encode(),
        "metrics.csv": csv_text(metrics_header(), [metrics_row(report)]).encode(),
        "decisions.csv": decisions_csv(exp.result).encode(),
        "batches.csv": batches_csv(exp.result).encode(),
        "trace.dspe": encode_tensor(exp.trace.tokens),
        "manifest.json": (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode(),
    }


def write_outputs(out_dir: str | Path, files: dict[str, bytes]) -> None:
    """Stage everything in a sibling temp directory, then move into place."""
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".dspe-", dir=out.parent))
    try:
        for name, data in files.items():
            (stage / name).write_bytes(data)
        out.mkdir(parents=True, exist_ok=True)
        for name in files:
            os.replace(stage / name, out / name)
    finally:
        for p in stage.iterdir():
            p.unlink()
        stage.rmdir()


def summarize(report: dict) -> str:
    s, f, c = report["savings"], report["fidelity"], report["conservation"]
    return (
        f"config {report['config_hash']} seed {report['seed']}: "
        f"dram_reads -{s['dram_reads']:.1%}, energy -{s['modeled_energy']:.1%}, "
        f"skip+reuse {c['skip_reuse_fraction']:.1%}, cosine min {f['cosine_min']:.6f}"
    )
