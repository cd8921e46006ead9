"""Compare validation MAE under future-weather noise with and without intervention."""

import argparse
import json
import warnings

from aircade.experiments import robustness_run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--K", type=int, default=3)
    ap.add_argument("--keep-prob", type=float, default=0.9)
    args = ap.parse_args()
    warnings.simplefilter("ignore")
    r = robustness_run(args.seeds, args.steps, sigma=args.sigma, K=args.K, keep_prob=args.keep_prob)
    for row in r.pop("rows"):
        print(json.dumps(row))
    print(json.dumps(r))


if __name__ == "__main__":
    main()
