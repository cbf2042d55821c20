"""Savings and skip counts as the duplicate rate grows.

    python scripts/sweep_duplicates.py --length 128 --seed 0 --exact
"""

import argparse

from dspe.config import EXACT_THRESHOLDS, RunConfig
from dspe.reports import build_report, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--length", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rates", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75])
    ap.add_argument("--exact", action="store_true", help="exactness thresholds")
    args = ap.parse_args()
    base = RunConfig(seed=args.seed)
    if args.exact:
        base = RunConfig(seed=args.seed, thresholds=EXACT_THRESHOLDS)
    print(f"{'d':>5} {'EarlySkip':>9} {'DiffReuse':>9} {'skip+reuse':>10} {'dram':>7} {'energy':>7} {'cos_min':>9}")
    for d in args.rates:
        cfg = base.override(**{"trace.length": args.length, "trace.duplicate_rate": d})
        r = build_report(run_experiment(cfg))
        dec, sav = r["decisions"], r["savings"]
        print(
            f"{d:5.2f} {dec['EarlySkip']:9d} {dec['DiffReuse']:9d} "
            f"{r['conservation']['skip_reuse_fraction']:10.3f} {sav['dram_reads']:7.3f} "
            f"{sav['modeled_energy']:7.3f} {r['fidelity']['cosine_min']:9.6f}"
        )


if __name__ == "__main__":
    main()
