"""Greedy batch ranking against arrival order and the exact path solver.

    python scripts/ordering_quality.py --n 1000 --seed 0
"""

import argparse
import json

from dspe.booth import RADIX4, RADIX8, ordering_quality


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = {f"radix{r}": ordering_quality(args.n, args.seed, r) for r in (RADIX4, RADIX8)}
    print(json.dumps(out, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
