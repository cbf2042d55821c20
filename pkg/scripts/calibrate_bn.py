"""Refit the default Booth BN tables from a labeled synthetic batch trace.

Label High means the radix-8 plan beats radix-4 when both execution orders
are solved exactly under the default plan cost model.

    python scripts/calibrate_bn.py --n 2000 --seed 0 --out src/dspe/data/bn_default.json
"""

import argparse

from dspe.bn import save_bn
from dspe.mblm import calibrate_bn


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="src/dspe/data/bn_default.json")
    args = ap.parse_args()
    model = calibrate_bn(args.n, args.seed)
    save_bn(model, args.out)
    print(f"wrote {args.out}: prior={model.prior}")


if __name__ == "__main__":
    main()
