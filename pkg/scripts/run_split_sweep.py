"""Repeated train/calibrate/test splits over the alpha x delta sweep.

    python3 scripts/run_split_sweep.py selective --out runs/selective
    python3 scripts/run_split_sweep.py segmentation --repeats 10
    python3 scripts/run_split_sweep.py multi --targets 2 --csv mydata.csv
"""

import argparse
from pathlib import Path

from lcc.data import (
    SyntheticFieldConfig,
    SyntheticRegressionConfig,
    generate_fields,
    generate_regression,
    load_fields,
    load_regression_csv,
)
from lcc.engine import ParamGrid
from lcc.ensemble import EnsembleConfig
from lcc.harness import SWEEP_DELTAS, REGRESSION_ALPHAS, SEGMENTATION_ALPHAS, SplitPlan, run_split_experiment, write_trial_report


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("family", choices=["selective", "multi", "segmentation"])
    p.add_argument("--alpha", type=float, nargs="+")
    p.add_argument("--delta", type=float, nargs="+", default=list(SWEEP_DELTAS))
    p.add_argument("--n", type=int, default=2000, help="synthetic dataset size")
    p.add_argument("--csv", help="regression CSV or field directory/.npz instead of synthetic data")
    p.add_argument("--targets", type=int, default=2, help="synthetic targets for the multi family")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--trees", type=int, default=30)
    p.add_argument("--variant", choices=["rf", "ert"], default="rf")
    p.add_argument("--search", choices=["min", "max", "first"])
    p.add_argument("--grid", default="0:1:0.01")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    args = p.parse_args()

    if args.family == "segmentation":
        ds = load_fields(args.csv) if args.csv else generate_fields(SyntheticFieldConfig(n=args.n, seed=args.seed))
        alphas = args.alpha or SEGMENTATION_ALPHAS
    else:
        m = args.targets if args.family == "multi" else 1
        ds = load_regression_csv(args.csv) if args.csv else generate_regression(
            SyntheticRegressionConfig(n=args.n, n_targets=m, seed=args.seed)
        )
        alphas = args.alpha or REGRESSION_ALPHAS

    rep = run_split_experiment(
        ds,
        alphas=alphas,
        deltas=args.delta,
        grid=ParamGrid.parse(args.grid),
        search=args.search,
        plan=SplitPlan(repeats=args.repeats, seed=args.seed),
        model_config=EnsembleConfig(n_trees=args.trees, variant=args.variant, seed=args.seed),
    )
    eff = "mean_normalized_size" if rep.family == "segmentation" else "mean_miscoverage"
    print(f"{rep.family}: search={rep.meta['search']}, {args.repeats} repeats")
    print(f"{'alpha':>7} {'delta':>6} {'violation':>10} {eff:>22} {'infeasible':>10}")
    for s in rep.summary:
        v, e = s["mean_violation"], s[eff]
        print(
            f"{s['alpha']:>7g} {s['delta']:>6g} {'n/a' if v is None else f'{v:.4f}':>10} "
            f"{'n/a' if e is None else f'{e:.4f}':>22} {s['infeasible']:>10}"
        )
    if args.out:
        for path in write_trial_report(rep, args.out):
            print(f"wrote {path}")


if __name__ == "__main__":
    main()
