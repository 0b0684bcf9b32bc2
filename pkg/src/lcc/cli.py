"""Command-line front end: ``lcc calibrate | validate | demo``.

Exit codes: 0 success, 2 invalid configuration or flags, 3 unreadable or
malformed input, 4 infeasible calibration.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import harness
from .data import (
    SyntheticFieldConfig,
    SyntheticRegressionConfig,
    generate_fields,
    generate_regression,
    load_fields,
    load_regression_csv,
)
from .engine import (
    ControlSpec,
    InfeasibleCalibrationError,
    LossMatrixFormatError,
    ParamGrid,
    calibrate,
    read_loss_matrix,
)
from .ensemble import EnsembleConfig
from .multi import MultiControlSpec, calibrate_multi, read_loss_tensor, sample_size_advisory
from .quantiles import BoundViolationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INFEASIBLE = 4

FAMILIES = ("selective", "multi", "segmentation")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Settings of a ``validate`` run; the JSON config uses the same keys."""

    experiment: str = "monte_carlo"  # or "split"
    family: str = "selective"
    alpha: list = field(default_factory=lambda: [0.01])
    delta: list = field(default_factory=lambda: [0.1])
    grid: str = "0:1:0.01"
    search: str | None = None
    bound: float = 1.0
    seed: int = 0
    mode: str = "ideal"
    trials: int = 2000
    n_calib: int = 200
    n_train: int = 1000
    n_total: int = 2000
    repeats: int = 10
    test_frac: float = 0.2
    calib_frac: float = 0.2
    targets: int = 2
    model: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        errors = []
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for k in sorted(set(doc) - known):
            errors.append(f"unknown key {k!r}")
        cfg = cls(**{k: v for k, v in doc.items() if k in known})
        for key in ("alpha", "delta"):
            val = getattr(cfg, key)
            if isinstance(val, (int, float)):
                val = [val]
                setattr(cfg, key, val)
            if not isinstance(val, list) or not val or not all(isinstance(v, (int, float)) for v in val):
                errors.append(f"{key} must be a number or a nonempty list of numbers")
        if all(isinstance(d, (int, float)) and 0 < d < 1 for d in cfg.delta) is False:
            errors.append("every delta must lie in (0, 1)")
        if cfg.experiment not in ("monte_carlo", "split"):
            errors.append(f"experiment must be 'monte_carlo' or 'split', got {cfg.experiment!r}")
        if cfg.family not in FAMILIES:
            errors.append(f"family must be one of {FAMILIES}, got {cfg.family!r}")
        if cfg.mode not in ("ideal", "practical"):
            errors.append(f"mode must be 'ideal' or 'practical', got {cfg.mode!r}")
        if cfg.search not in (None, "min", "max", "first", "coordinate-max"):
            errors.append(f"unknown search {cfg.search!r}")
        try:
            ParamGrid.parse(cfg.grid)
        except (ValueError, AttributeError) as exc:
            errors.append(f"grid: {exc}")
        for key in ("trials", "n_calib", "n_train", "n_total", "repeats", "targets", "seed"):
            v = getattr(cfg, key)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                errors.append(f"{key} must be a nonnegative integer")
        if cfg.experiment == "monte_carlo" and isinstance(cfg.trials, int) and cfg.trials < 100:
            errors.append("trials must be at least 100")
        if cfg.family == "multi" and isinstance(cfg.targets, int) and cfg.targets < 2:
            errors.append("multi family needs targets >= 2")
        model_keys = {f.name for f in fields(EnsembleConfig)} - {"seed"}
        for k in sorted(set(cfg.model) - model_keys):
            errors.append(f"unknown model key {k!r}")
        data_keys = _data_keys(cfg.family)
        for k in sorted(set(cfg.data) - data_keys):
            errors.append(f"unknown data key {k!r}")
        if errors:
            raise ConfigError("; ".join(errors))
        return cfg


def _data_keys(family: str) -> set:
    base = {"csv", "targets", "path"}
    if family == "segmentation":
        return base | ({f.name for f in fields(SyntheticFieldConfig)} - {"n", "seed"})
    return base | ({f.name for f in fields(SyntheticRegressionConfig)} - {"n", "seed", "n_targets"})


def load_config(ref: str) -> RunConfig:
    """Read a config file; a bare name like ``ideal-mode.toy`` picks a bundled config."""
    path = Path(ref)
    if not path.exists():
        bundled = resources.files("lcc") / "configs" / f"{ref}.json"
        if not bundled.is_file():
            raise FileNotFoundError(f"no such input: {ref}")
        text = bundled.read_text()
    else:
        text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return RunConfig.from_dict(doc)


def _model_config(cfg: RunConfig) -> EnsembleConfig:
    return EnsembleConfig(**{"n_trees": 30, **cfg.model})


def _reg_config(cfg: RunConfig, n: int) -> SyntheticRegressionConfig:
    extra = {k: v for k, v in cfg.data.items() if k not in ("csv", "targets", "path")}
    m = cfg.targets if cfg.family == "multi" else 1
    return SyntheticRegressionConfig(n=n, n_targets=m, seed=cfg.seed, **extra)


def _field_config(cfg: RunConfig, n: int) -> SyntheticFieldConfig:
    extra = {k: v for k, v in cfg.data.items() if k not in ("csv", "targets", "path")}
    return SyntheticFieldConfig(n=n, seed=cfg.seed, **extra)


def run_monte_carlo(cfg: RunConfig) -> list[dict]:
    grid = ParamGrid.parse(cfg.grid)
    if cfg.family == "segmentation":
        gen = harness.FieldTrials(_field_config(cfg, max(cfg.n_calib, 1)), grid)
    else:
        gen = harness.SelectiveTrials.fit(
            _reg_config(cfg, max(cfg.n_train, 10)), grid, _model_config(cfg), n_train=cfg.n_train, seed=cfg.seed
        )
    search = cfg.search or harness.DEFAULT_SEARCH[cfg.family]
    rows = []
    for d in cfg.delta:
        for a in cfg.alpha:
            if cfg.family == "multi":
                spec = MultiControlSpec.uniform(a, d, cfg.targets, cfg.bound)
            else:
                spec = ControlSpec(a, d, cfg.bound)
            est = harness.monte_carlo_guarantee(
                gen, spec, n=cfg.n_calib, trials=cfg.trials, mode=cfg.mode, search=search, seed=cfg.seed
            )
            rows.append({"alpha": a, "delta": d, **est.to_dict()})
    return rows


def _load_dataset(cfg: RunConfig):
    if "csv" in cfg.data or "path" in cfg.data:
        src = cfg.data.get("csv") or cfg.data.get("path")
        if cfg.family == "segmentation":
            return load_fields(src)
        return load_regression_csv(src, cfg.data.get("targets"))
    if cfg.family == "segmentation":
        return generate_fields(_field_config(cfg, cfg.n_total))
    return generate_regression(_reg_config(cfg, cfg.n_total))


def run_split(cfg: RunConfig) -> harness.TrialReport:
    plan = harness.SplitPlan(cfg.test_frac, cfg.calib_frac, cfg.repeats, cfg.seed)
    return harness.run_split_experiment(
        _load_dataset(cfg),
        alphas=cfg.alpha,
        deltas=cfg.delta,
        grid=ParamGrid.parse(cfg.grid),
        search=cfg.search,
        plan=plan,
        model_config=_model_config(cfg),
        bound=cfg.bound,
    )


# -- commands -------------------------------------------------------------------


def _write_quantiles(path: Path, grid: ParamGrid, quantiles: np.ndarray, mask: np.ndarray) -> None:
    q = np.atleast_2d(quantiles)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda"] + [f"quantile_{j}" for j in range(q.shape[0])] + ["feasible"])
        for k, label in enumerate(grid.labels()):
            w.writerow([label] + [repr(float(q[j, k])) for j in range(q.shape[0])] + [int(mask[k])])


def cmd_calibrate(args) -> int:
    out = Path(args.out)
    if args.manifest:
        tensor, spec = read_loss_tensor(args.manifest)
        res = calibrate_multi(tensor, spec, args.search or "max", coordinatewise=args.coordinatewise)
        n, m = tensor.n, tensor.m
        adv = sample_size_advisory(n, m, spec.delta)
    else:
        if args.alpha is None or args.delta is None:
            raise ConfigError("--alpha and --delta are required with a loss matrix")
        matrix = read_loss_matrix(args.matrix)
        if args.grid:
            expected = ParamGrid.parse(args.grid)
            if expected.size != matrix.grid.size or not np.allclose(expected.points, matrix.grid.points):
                raise ConfigError(f"--grid {args.grid} does not match the matrix header")
        res = calibrate(matrix, ControlSpec(args.alpha, args.delta, args.bound), args.search or "min")
        adv = sample_size_advisory(matrix.n, 1, args.delta)
    out.mkdir(parents=True, exist_ok=True)
    qpath = out / "quantiles.csv"
    _write_quantiles(qpath, res.grid, res.quantiles, res.feasible_mask)
    doc = res.to_dict()
    doc["sample_size_advisory"] = {"ok": adv.ok, "message": adv.message}
    if args.manifest:
        doc["alphas"] = list(res.spec.alphas)
        doc["bounds"] = list(res.spec.bounds)
    harness.write_json(doc, out / "calibration.json")
    print(f"lambda* = {res.lambda_star}")
    print(f"feasible set: {res.feasible_size} of {res.grid.size} grid points")
    print(f"quantile table: {qpath}")
    if not adv.ok:
        print(f"warning: {adv.message}", file=sys.stderr)
    return EXIT_OK


def _write_mc(rows: list[dict], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    harness.write_json({"experiment": "monte_carlo", "cells": rows}, out / "mc_report.json")
    harness.write_rows_csv(rows, out / "mc_table.csv")


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    if cfg.experiment == "monte_carlo":
        rows = run_monte_carlo(cfg)
        _write_mc(rows, out)
        for r in rows:
            flag = "ok" if r["within_tolerance"] else "HIGH"
            print(
                f"alpha={r['alpha']:<6g} delta={r['delta']:<5g} {r['mode']} violation={r['violation_rate']:.4f} "
                f"(limit {r['delta'] + r['tolerance']:.4f}) {flag}"
            )
    else:
        report = run_split(cfg)
        harness.write_trial_report(report, out)
        _print_summary(report)
    harness.write_json(asdict(cfg), out / "config.json")
    return EXIT_OK


def _print_summary(report: harness.TrialReport) -> None:
    eff = "mean_normalized_size" if report.family == "segmentation" else "mean_miscoverage"
    print(f"{report.family}: search={report.meta['search']} repeats={report.meta['plan']['repeats']}")
    print(f"{'alpha':>7} {'delta':>6} {'violation':>10} {'limit':>7} {eff:>22} {'infeasible':>10}")
    n_test = report.rows[0]["n_test"] if report.rows else 1
    reps = report.meta["plan"]["repeats"]
    for s in report.summary:
        limit = s["delta"] + harness.binomial_tolerance(s["delta"], n_test * reps)
        v = s["mean_violation"]
        e = s[eff]
        vs = "n/a" if v is None else f"{v:.4f}"
        es = "n/a" if e is None else f"{e:.4f}"
        flag = "" if v is None or v <= limit else "  HIGH"
        print(f"{s['alpha']:>7g} {s['delta']:>6g} {vs:>10} {limit:>7.4f} {es:>22} {s['infeasible']:>10}{flag}")


def cmd_demo(args) -> int:
    defaults = {
        "selective": harness.REGRESSION_ALPHAS,
        "multi": harness.REGRESSION_ALPHAS,
        "segmentation": harness.SEGMENTATION_ALPHAS,
    }
    cfg = RunConfig(
        experiment="split",
        family=args.family,
        alpha=list(args.alpha or defaults[args.family]),
        delta=list(args.delta or harness.SWEEP_DELTAS),
        grid=args.grid,
        search=args.search,
        seed=args.seed,
        n_total=args.n,
        repeats=args.repeats,
        targets=args.targets,
        model={"n_trees": args.trees},
    )
    cfg = RunConfig.from_dict(asdict(cfg))
    report = run_split(cfg)
    harness.write_trial_report(report, Path(args.out))
    harness.write_json(asdict(cfg), Path(args.out) / "config.json")
    _print_summary(report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lcc", description="Calibrate a predictor parameter on a grid with finite-sample loss control.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="choose lambda* from a loss-matrix CSV")
    c.add_argument("matrix", nargs="?", help="loss matrix CSV (header = grid points)")
    c.add_argument("--manifest", help="multi-loss manifest JSON instead of a single matrix")
    c.add_argument("--alpha", type=float)
    c.add_argument("--delta", type=float)
    c.add_argument("--bound", type=float, default=1.0)
    c.add_argument("--search", choices=["min", "max", "first"])
    c.add_argument("--coordinatewise", action="store_true", help="per-coordinate max for decomposable manifests")
    c.add_argument("--grid", help="expected grid start:stop:step, checked against the header")
    c.add_argument("--out", default="lcc_runs/calibrate")
    c.set_defaults(func=cmd_calibrate)

    v = sub.add_parser("validate", help="Monte Carlo or split-experiment check from a JSON config")
    v.add_argument("config", help="config path, or a bundled name such as ideal-mode.toy")
    v.add_argument("--out", default="lcc_runs/validate")
    v.set_defaults(func=cmd_validate)

    d = sub.add_parser("demo", help="end-to-end run on synthetic data")
    d.add_argument("family", choices=FAMILIES)
    d.add_argument("--alpha", type=float, nargs="+")
    d.add_argument("--delta", type=float, nargs="+")
    d.add_argument("--grid", default="0:1:0.01")
    d.add_argument("--search", choices=["min", "max", "first"])
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--n", type=int, default=2000, help="dataset size")
    d.add_argument("--repeats", type=int, default=10)
    d.add_argument("--targets", type=int, default=2, help="target count for the multi demo")
    d.add_argument("--trees", type=int, default=30)
    d.add_argument("--out", default="lcc_runs/demo")
    d.set_defaults(func=cmd_demo)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "demo" and args.family == "multi" and args.search is None:
        args.search = "coordinate-max"
    try:
        return args.func(args)
    except InfeasibleCalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except FileNotFoundError as exc:
        name = exc.filename or str(exc)
        print(f"error: no such input: {name}", file=sys.stderr)
        return EXIT_IO
    except (LossMatrixFormatError, BoundViolationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
