"""Overfit a small model on 200 synthetic windows and report the train-MAE ratio."""

import argparse
import json
import warnings

from aircade.experiments import overfit_run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--lr", type=float, default=5e-4)
    ap.add_argument("--no-intv", action="store_true")
    args = ap.parse_args()
    warnings.simplefilter("ignore")
    for seed in args.seeds:
        r = overfit_run(seed, args.steps, args.batch_size, args.no_intv, args.lr)
        print(json.dumps({"seed": seed, **r}))


if __name__ == "__main__":
    main()
