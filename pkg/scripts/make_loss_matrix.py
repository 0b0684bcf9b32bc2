"""Write a selective-regression loss matrix CSV for ``lcc calibrate``.

Trains an ensemble on synthetic data, then scores ``--n`` fresh calibration
samples over the threshold grid.

    python3 scripts/make_loss_matrix.py --out calib.csv
    lcc calibrate calib.csv --alpha 0.01 --delta 0.1 --search max
"""

import argparse

import numpy as np

from lcc.data import SyntheticRegressionConfig, draw_regression
from lcc.engine import LossMatrix, ParamGrid, write_loss_matrix
from lcc.ensemble import EnsembleConfig, train
from lcc.predictors import selective_loss_matrix


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n", type=int, default=500, help="calibration samples")
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--trees", type=int, default=30)
    p.add_argument("--grid", default="0:1:0.01")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="calib.csv")
    args = p.parse_args()

    cfg = SyntheticRegressionConfig()
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0]))
    X, Y = draw_regression(cfg, args.n_train, rng)
    model = train(X, Y, EnsembleConfig(n_trees=args.trees, seed=args.seed))
    Xc, Yc = draw_regression(cfg, args.n, rng)
    f, g = model.predict_mean_std(Xc)
    grid = ParamGrid.parse(args.grid)
    L = selective_loss_matrix(Yc[:, 0], f[:, 0], g[:, 0], grid.values())
    write_loss_matrix(LossMatrix(L, grid), args.out)
    print(f"wrote {args.n} x {grid.size} loss matrix to {args.out}")


if __name__ == "__main__":
    main()
