"""Split experiments and Monte Carlo checks of the loss-control guarantee.

Seed derivation from one root seed ``s`` (all via ``numpy.random.SeedSequence``):

* ``[s, 0]``      synthetic dataset draw
* ``[s, 1, r]``   train/calibration/test permutation of repeat ``r``
* ``[s, 2, r]``   ensemble seed of repeat ``r``
* ``[s, 3, t]``   Monte Carlo trial ``t``
* ``[s, 4]``      training data of the fixed Monte Carlo model
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import ensemble
from .data import (
    FieldDataset,
    RegressionDataset,
    SyntheticFieldConfig,
    SyntheticRegressionConfig,
    draw_fields,
    draw_regression,
)
from .engine import (
    ControlSpec,
    InfeasibleCalibrationError,
    LossMatrix,
    ParamGrid,
    SearchFunction,
    calibrate,
    calibrate_ideal,
    practical_quantiles,
    ideal_quantiles,
)
from .multi import MultiControlSpec, calibrate_coordinates
from .predictors import field_loss_matrix, field_size_matrix, selective_loss_matrix

DEFAULT_SEARCH = {"selective": "max", "multi": "coordinate-max", "segmentation": "min"}
SWEEP_DELTAS = (0.1, 0.15, 0.2)
REGRESSION_ALPHAS = (0.003, 0.005, 0.01, 0.03, 0.05)
SEGMENTATION_ALPHAS = (0.3, 0.35, 0.4, 0.45, 0.5)


def derive_seed(*path: int) -> int:
    return int(np.random.SeedSequence(list(path)).generate_state(1)[0])


def binomial_tolerance(delta: float, trials: int) -> float:
    """Three-sigma slack for a violation frequency estimated from ``trials`` draws."""
    return 3.0 * math.sqrt(delta * (1.0 - delta) / trials)


@dataclass(frozen=True)
class SplitPlan:
    test_frac: float = 0.2
    calib_frac: float = 0.2  # fraction of the non-test rows
    repeats: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.test_frac < 1 and 0 < self.calib_frac < 1):
            raise ValueError("split fractions must lie in (0, 1)")
        if self.repeats < 1:
            raise ValueError("need at least one repeat")

    def split(self, n: int, repeat: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(train, calibration, test) row indices for one repeat."""
        n_test = int(round(self.test_frac * n))
        n_cal = int(round(self.calib_frac * (n - n_test)))
        if n_test < 1 or n_cal < 1 or n - n_test - n_cal < 1:
            raise ValueError(f"dataset of {n} rows too small for this split plan")
        perm = np.random.default_rng(np.random.SeedSequence([self.seed, 1, repeat])).permutation(n)
        test, cal, train = perm[:n_test], perm[n_test : n_test + n_cal], perm[n_test + n_cal :]
        return np.sort(train), np.sort(cal), np.sort(test)


@dataclass
class TrialReport:
    """Per-repeat rows and per-(alpha, delta) means of a split experiment."""

    family: str
    rows: list
    summary: list
    meta: dict = field(default_factory=dict)

    def cell(self, alpha: float, delta: float) -> dict:
        for s in self.summary:
            if s["alpha"] == alpha and s["delta"] == delta:
                return s
        raise KeyError((alpha, delta))

    def to_dict(self) -> dict:
        return {"family": self.family, "meta": self.meta, "summary": self.summary, "rows": self.rows}


def _summarize(rows: list, alphas, deltas, eff_key: str) -> list:
    out = []
    for d in deltas:
        for a in alphas:
            cell = [r for r in rows if r["alpha"] == a and r["delta"] == d]
            ok = [r for r in cell if not r["infeasible"]]
            out.append(
                {
                    "alpha": a,
                    "delta": d,
                    "repeats": len(cell),
                    "infeasible": len(cell) - len(ok),
                    "mean_violation": float(np.mean([r["violation"] for r in ok])) if ok else None,
                    f"mean_{eff_key}": float(np.mean([r[eff_key] for r in ok])) if ok else None,
                }
            )
    return out


def run_split_experiment(
    dataset: RegressionDataset | FieldDataset,
    *,
    alphas: Sequence[float],
    deltas: Sequence[float],
    grid: ParamGrid | None = None,
    search: str | None = None,
    plan: SplitPlan | None = None,
    model_config: ensemble.EnsembleConfig | None = None,
    bound: float = 1.0,
) -> TrialReport:
    """Train, calibrate and test on repeated random splits, sweeping (alpha, delta).

    Regression datasets with one target run selective regression; with more
    targets, joint control of the per-target losses with per-coordinate max
    search. Field datasets run probability-field thresholding (no training:
    the forecast probabilities are the model). Losses are computed once per
    repeat and reused across the sweep. Infeasible cells are recorded, not
    raised.
    """
    plan = plan or SplitPlan()
    grid = grid or ParamGrid.linspace(0.0, 1.0, 0.01)
    if isinstance(dataset, FieldDataset):
        family = "segmentation"
    elif dataset.Y.shape[1] == 1:
        family = "selective"
    else:
        family = "multi"
    search = search or DEFAULT_SEARCH[family]
    if family == "multi" and search != "coordinate-max":
        raise ValueError("multi-target runs use coordinate-max search")
    lam = grid.values()
    model_config = model_config or ensemble.EnsembleConfig(n_trees=30)
    rows = []
    for r in range(plan.repeats):
        tr, ca, te = plan.split(len(dataset), r)
        if family == "segmentation":
            cal_loss = field_loss_matrix(dataset.probs[ca], dataset.labels[ca], lam)
            test_loss = field_loss_matrix(dataset.probs[te], dataset.labels[te], lam)
            test_eff = field_size_matrix(dataset.probs[te], lam)
            eff_key = "normalized_size"
        else:
            cfg = ensemble.EnsembleConfig(**{**asdict(model_config), "seed": derive_seed(plan.seed, 2, r)})
            model = ensemble.train(dataset.X[tr], dataset.Y[tr], cfg)
            f_cal, g_cal = model.predict_mean_std(dataset.X[ca])
            f_te, g_te = model.predict_mean_std(dataset.X[te])
            m = dataset.Y.shape[1]
            cal_loss = [selective_loss_matrix(dataset.Y[ca, j], f_cal[:, j], g_cal[:, j], lam) for j in range(m)]
            test_loss = [selective_loss_matrix(dataset.Y[te, j], f_te[:, j], g_te[:, j], lam) for j in range(m)]
            test_eff = [(g_te[:, j][:, None] > lam[None, :]).astype(float) for j in range(m)]
            eff_key = "miscoverage"
        for d in deltas:
            for a in alphas:
                row = {"alpha": a, "delta": d, "repeat": r, "n_calib": int(ca.size), "n_test": int(te.size)}
                try:
                    if family == "multi":
                        spec = MultiControlSpec.uniform(a, d, len(cal_loss), bound)
                        res = calibrate_coordinates([LossMatrix(L, grid) for L in cal_loss], spec)
                        ks = [int(np.flatnonzero(lam == v)[0]) for v in res.lambda_star]
                        viol = np.any([test_loss[j][:, k] > a for j, k in enumerate(ks)], axis=0)
                        eff = float(np.mean([test_eff[j][:, k].mean() for j, k in enumerate(ks)]))
                        row["lambda_star"] = list(res.lambda_star)
                    else:
                        L_cal = cal_loss if family == "segmentation" else cal_loss[0]
                        L_te = test_loss if family == "segmentation" else test_loss[0]
                        E_te = test_eff if family == "segmentation" else test_eff[0]
                        res = calibrate(LossMatrix(L_cal, grid), ControlSpec(a, d, bound), search)
                        k = res.index
                        viol = L_te[:, k] > a
                        eff = float(E_te[:, k].mean())
                        row["lambda_star"] = res.lambda_star
                    row.update(infeasible=False, violation=float(np.mean(viol)), **{eff_key: eff})
                except InfeasibleCalibrationError:
                    row.update(infeasible=True, lambda_star=None, violation=None, **{eff_key: None})
                rows.append(row)
    meta = {
        "search": search,
        "grid": [float(lam[0]), float(lam[-1]), int(lam.size)],
        "plan": asdict(plan),
        "bound": bound,
        "n": len(dataset),
    }
    if family != "segmentation":
        meta["model"] = asdict(model_config)
    return TrialReport(family, rows, _summarize(rows, alphas, deltas, eff_key), meta)


# -- Monte Carlo ----------------------------------------------------------------


class LossGenerator(Protocol):
    """Draws i.i.d. loss rows: ``(size, G)``, or ``(m, size, G)`` for m losses."""

    grid: ParamGrid
    m: int

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray: ...


class SelectiveTrials:
    """Fresh regression samples scored by a fixed trained ensemble."""

    def __init__(self, model: ensemble.TreeEnsemble, cfg: SyntheticRegressionConfig, grid: ParamGrid):
        self.model, self.cfg, self.grid = model, cfg, grid
        self.m = cfg.n_targets

    @classmethod
    def fit(
        cls,
        cfg: SyntheticRegressionConfig,
        grid: ParamGrid,
        model_config: ensemble.EnsembleConfig | None = None,
        n_train: int = 1000,
        seed: int = 0,
    ) -> "SelectiveTrials":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
        X, Y = draw_regression(cfg, n_train, rng)
        mc = model_config or ensemble.EnsembleConfig(n_trees=30)
        model = ensemble.train(X, Y, ensemble.EnsembleConfig(**{**asdict(mc), "seed": derive_seed(seed, 4)}))
        return cls(model, cfg, grid)

    def draw(self, rng, size):
        X, Y = draw_regression(self.cfg, size, rng)
        f, g = self.model.predict_mean_std(X)
        lam = self.grid.values()
        mats = np.stack([selective_loss_matrix(Y[:, j], f[:, j], g[:, j], lam) for j in range(self.m)])
        return mats[0] if self.m == 1 else mats


class FieldTrials:
    def __init__(self, cfg: SyntheticFieldConfig, grid: ParamGrid):
        self.cfg, self.grid = cfg, grid
        self.m = 1

    def draw(self, rng, size):
        probs, labels = draw_fields(self.cfg, size, rng)
        return field_loss_matrix(probs, labels, self.grid.values())


@dataclass
class MonteCarloEstimate:
    mode: str
    violation_rate: float
    tolerance: float
    delta: float
    trials: int
    n: int
    ideal_rate: float
    practical_rate: float
    ideal_infeasible: int
    practical_infeasible: int
    agreement_rate: float
    inclusion_violations: int
    mean_lambda_ideal: float | None = None
    mean_lambda_practical: float | None = None

    @property
    def within_tolerance(self) -> bool:
        return self.violation_rate <= self.delta + self.tolerance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["within_tolerance"] = self.within_tolerance
        return d


def _single_trial(L: np.ndarray, n: int, spec: ControlSpec, s: SearchFunction, grid: ParamGrid):
    cal = LossMatrix(L[:n], grid)
    full = cal.with_row(L[n])
    out = {}
    masks = {
        "practical": practical_quantiles(cal, spec) <= spec.alpha,
        "ideal": ideal_quantiles(full, spec) <= spec.alpha,
    }
    for mode, fn, mat in (("practical", calibrate, cal), ("ideal", calibrate_ideal, full)):
        try:
            res = fn(mat, spec, s)
            out[mode] = (res.index, bool(L[n, res.index] > spec.alpha))
        except InfeasibleCalibrationError:
            out[mode] = None
    return out, bool(np.any(masks["practical"] & ~masks["ideal"]))


def _multi_trial(L: np.ndarray, n: int, spec: MultiControlSpec, grid: ParamGrid):
    lam = grid.values()
    out = {}
    inclusion_bad = False
    for mode in ("practical", "ideal"):
        ideal = mode == "ideal"
        mats = [LossMatrix(L[j, : n + 1] if ideal else L[j, :n], grid) for j in range(spec.m)]
        try:
            res = calibrate_coordinates(mats, spec, ideal=ideal)
            ks = tuple(int(np.flatnonzero(lam == v)[0]) for v in res.lambda_star)
            viol = any(L[j, n, k] > spec.alphas[j] for j, k in enumerate(ks))
            out[mode] = (ks, viol)
            out[mode + "_masks"] = res.feasible_masks
        except InfeasibleCalibrationError:
            out[mode] = None
    if "practical_masks" in out:
        ideal_masks = out.get("ideal_masks")
        if ideal_masks is None:
            inclusion_bad = True
        else:
            inclusion_bad = any(np.any(p & ~i) for p, i in zip(out["practical_masks"], ideal_masks))
    return out, inclusion_bad


def monte_carlo_guarantee(
    generator: LossGenerator,
    spec: ControlSpec | MultiControlSpec,
    *,
    n: int,
    trials: int = 2000,
    mode: str = "ideal",
    search: SearchFunction | str = "max",
    seed: int = 0,
) -> MonteCarloEstimate:
    """Estimate ``P(test loss > alpha)`` over independent (calibration, test) draws.

    Every trial draws ``n + 1`` fresh loss rows and calibrates both ways:
    ``ideal`` includes the test row in the quantile, ``practical`` appends
    the bound instead. ``mode`` only selects which rate is the headline.
    For a :class:`MultiControlSpec` a trial violates when any loss exceeds
    its level, and search is per coordinate. Rates are over trials where that
    mode was feasible.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    if mode not in ("ideal", "practical"):
        raise ValueError(f"unknown mode {mode!r}")
    multi = isinstance(spec, MultiControlSpec)
    s = SearchFunction.coerce(search) if not multi else None
    grid = generator.grid
    viol = {"ideal": 0, "practical": 0}
    feas = {"ideal": 0, "practical": 0}
    lam_sum = {"ideal": 0.0, "practical": 0.0}
    agree = both = incl_bad = 0
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3, t]))
        try:
            L = np.asarray(generator.draw(rng, n + 1), dtype=float)
        except Exception as exc:
            raise RuntimeError(f"loss generator failed at trial {t}") from exc
        if multi:
            out, bad = _multi_trial(L, n, spec, grid)
        else:
            out, bad = _single_trial(L, n, spec, s, grid)
        incl_bad += bad
        for md in ("ideal", "practical"):
            if out[md] is not None:
                feas[md] += 1
                viol[md] += out[md][1]
                k = out[md][0]
                lam_sum[md] += float(np.mean(grid.values()[list(np.atleast_1d(k))]))
        if out["ideal"] is not None and out["practical"] is not None:
            both += 1
            agree += out["ideal"][0] == out["practical"][0]
    rates = {md: viol[md] / feas[md] if feas[md] else float("nan") for md in viol}
    return MonteCarloEstimate(
        mode=mode,
        violation_rate=rates[mode],
        tolerance=binomial_tolerance(spec.delta, trials),
        delta=spec.delta,
        trials=trials,
        n=n,
        ideal_rate=rates["ideal"],
        practical_rate=rates["practical"],
        ideal_infeasible=trials - feas["ideal"],
        practical_infeasible=trials - feas["practical"],
        agreement_rate=agree / both if both else float("nan"),
        inclusion_violations=incl_bad,
        mean_lambda_ideal=lam_sum["ideal"] / feas["ideal"] if feas["ideal"] else None,
        mean_lambda_practical=lam_sum["practical"] / feas["practical"] if feas["practical"] else None,
    )


# -- reports ------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_json(doc: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_rows_csv(rows: list, path: str | Path) -> None:
    """Flat table; columns are the union of row keys, ordered with alpha/delta/repeat first."""
    keys: list = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    lead = [k for k in ("alpha", "delta", "repeat") if k in keys]
    keys = lead + sorted(k for k in keys if k not in lead)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow(["" if r.get(k) is None else _fmt(r.get(k)) for k in keys])


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_trial_report(report: TrialReport, out_dir: str | Path, stem: str = "report") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{stem}.json", out / f"{stem}_rows.csv", out / f"{stem}_summary.csv"]
    write_json(report.to_dict(), paths[0])
    write_rows_csv(report.rows, paths[1])
    write_rows_csv(report.summary, paths[2])
    return paths
