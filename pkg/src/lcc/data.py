"""Synthetic datasets and dataset file formats.

Regression data: features uniform on ``[0, 1]^d``, each target a smooth
function of the features plus (optionally heteroscedastic) Gaussian noise,
clipped to ``[0, 1]``. Probability fields: a smooth latent field built from
Gaussian blobs; the event mask is where a noisy copy of it exceeds a
threshold set by the event rate, and the forecast probability is a logistic
transform of another noisy copy, distorted by ``sharpness`` and ``bias``.

The ``draw_*`` functions sample raw i.i.d. data from a generator and are what
Monte Carlo trials use; ``generate_*`` build a seeded dataset and apply
min-max normalization like a real experiment would.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SyntheticRegressionConfig:
    n: int = 2000
    n_features: int = 5
    noise: str = "heteroscedastic"
    noise_scale: float = 0.1
    n_targets: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n < 10:
            raise ValueError("synthetic regression needs n >= 10")
        if self.n_features < 1 or self.n_targets < 1:
            raise ValueError("need at least one feature and one target")
        if self.noise not in ("homoscedastic", "heteroscedastic"):
            raise ValueError(f"unknown noise model {self.noise!r}")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")


@dataclass(frozen=True)
class SyntheticFieldConfig:
    n: int = 2000
    P: int = 27
    Q: int = 27
    event_rate: float = 0.1
    # >1 sharpens (overconfident forecasts), <1 flattens
    sharpness: float = 1.0
    # logit shift of the forecast probability
    bias: float = 0.0
    # forecast error on the latent field
    skill_noise: float = 0.15
    blobs: int = 3
    length_scale: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.P < 2 or self.Q < 2:
            raise ValueError("field grid must be at least 2 x 2")
        if not 0.0 <= self.event_rate < 1.0:
            raise ValueError("event_rate must lie in [0, 1)")
        if self.n < 1 or self.blobs < 1 or self.length_scale <= 0 or self.sharpness <= 0:
            raise ValueError("degenerate field config")


@dataclass
class RegressionDataset:
    X: np.ndarray
    Y: np.ndarray  # (n, m)
    feature_names: list = field(default_factory=list)
    target_names: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass
class FieldDataset:
    probs: np.ndarray  # (n, P, Q) forecast probabilities
    labels: np.ndarray  # (n, P, Q) bool event masks

    def __len__(self) -> int:
        return self.probs.shape[0]


def _target_mean(X: np.ndarray, j: int) -> np.ndarray:
    d = X.shape[1]
    a, b, c = X[:, 0], X[:, 1 % d], X[:, (j + 2) % d]
    return 0.5 + 0.2 * np.sin(2 * np.pi * a + j) + 0.2 * (b - 0.5) + 0.15 * (c - 0.5) * (a - 0.5)


def _target_sd(X: np.ndarray, j: int, cfg: SyntheticRegressionConfig) -> np.ndarray:
    if cfg.noise == "homoscedastic":
        return np.full(X.shape[0], cfg.noise_scale)
    return cfg.noise_scale * 2.0 * X[:, (j + 1) % X.shape[1]]


def draw_regression(cfg: SyntheticRegressionConfig, size: int, rng: np.random.Generator):
    """``size`` i.i.d. raw samples; returns ``(X, Y)`` with ``Y`` of shape ``(size, m)``."""
    X = rng.uniform(size=(size, cfg.n_features))
    Y = np.empty((size, cfg.n_targets))
    for j in range(cfg.n_targets):
        eps = rng.standard_normal(size)
        Y[:, j] = np.clip(_target_mean(X, j) + _target_sd(X, j, cfg) * eps, 0.0, 1.0)
    return X, Y


def minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(axis=0), a.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (a - lo) / span


def generate_regression(cfg: SyntheticRegressionConfig, normalize: bool = True) -> RegressionDataset:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    X, Y = draw_regression(cfg, cfg.n, rng)
    if normalize:
        X, Y = minmax(X), minmax(Y)
    return RegressionDataset(
        X, Y, [f"x{i}" for i in range(cfg.n_features)], [f"target{j}" for j in range(cfg.n_targets)]
    )


def _latent(cfg: SyntheticFieldConfig, size: int, rng: np.random.Generator) -> np.ndarray:
    centers = rng.uniform(size=(size, cfg.blobs, 2)) * np.array([cfg.P - 1, cfg.Q - 1])
    amps = rng.uniform(0.5, 1.5, size=(size, cfg.blobs))
    two_l2 = 2 * cfg.length_scale**2
    # isotropic Gaussian blobs factor into row and column profiles
    rows = np.exp(-((np.arange(cfg.P)[None, None] - centers[..., 0, None]) ** 2) / two_l2)
    cols = np.exp(-((np.arange(cfg.Q)[None, None] - centers[..., 1, None]) ** 2) / two_l2)
    return np.einsum("sb,sbp,sbq->spq", amps, rows, cols)


_LABEL_NOISE = 0.15


@lru_cache(maxsize=32)
def _event_threshold(cfg: SyntheticFieldConfig) -> float:
    if cfg.event_rate == 0.0:
        return np.inf
    # fixed reference draw: the threshold depends on the config, not its seed
    rng = np.random.default_rng(20240917)
    ref = _latent(cfg, 200, rng)
    ref = ref + _LABEL_NOISE * rng.standard_normal(ref.shape)
    return float(np.quantile(ref, 1.0 - cfg.event_rate))


def draw_fields(cfg: SyntheticFieldConfig, size: int, rng: np.random.Generator):
    """``size`` i.i.d. (probability field, event mask) pairs."""
    z = _latent(cfg, size, rng)
    tau = _event_threshold(cfg)
    labels = (z + _LABEL_NOISE * rng.standard_normal(z.shape)) > tau
    z_hat = z + cfg.skill_noise * rng.standard_normal(z.shape)
    if np.isfinite(tau):
        logit = cfg.sharpness * (z_hat - tau) / 0.15 + cfg.bias
    else:
        logit = np.full(z.shape, -10.0 + cfg.bias)
    # strictly below 1 so a threshold of 1.0 always yields the empty set
    probs = 0.999 / (1.0 + np.exp(-logit))
    return probs, labels


def generate_fields(cfg: SyntheticFieldConfig) -> FieldDataset:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    probs, labels = draw_fields(cfg, cfg.n, rng)
    return FieldDataset(probs, labels)


# -- file formats -------------------------------------------------------------


def load_regression_csv(path: str | Path, targets: list[str] | None = None, normalize: bool = True) -> RegressionDataset:
    """Read a CSV with named columns.

    Target columns are ``targets`` if given, else every column whose name
    starts with ``target`` or ``y``, else the last column.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header and at least one row")
    header = [h.strip() for h in rows[0]]
    data = np.empty((len(rows) - 1, len(header)))
    for i, r in enumerate(rows[1:]):
        if len(r) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(r)} columns, header has {len(header)}")
        for j, c in enumerate(r):
            try:
                data[i, j] = float(c)
            except ValueError:
                raise ValueError(f"{path}: row {i + 2}, column {header[j]!r}: not a number: {c!r}") from None
    if targets is None:
        targets = [h for h in header if h.lower().startswith(("target", "y"))] or [header[-1]]
    missing = [t for t in targets if t not in header]
    if missing:
        raise ValueError(f"{path}: no such target columns {missing}")
    t_idx = [header.index(t) for t in targets]
    f_idx = [j for j in range(len(header)) if j not in t_idx]
    X, Y = data[:, f_idx], data[:, t_idx]
    if normalize:
        X, Y = minmax(X), minmax(Y)
    return RegressionDataset(X, Y, [header[j] for j in f_idx], list(targets))


def save_regression_csv(ds: RegressionDataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ds.feature_names) + list(ds.target_names))
        for x, y in zip(ds.X, ds.Y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])


def _write_grid(path: Path, cells: list) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(cells)


def save_fields(ds: FieldDataset, path: str | Path, packed: bool = False) -> None:
    """Write fields either as a directory of CSV grids or one packed ``.npz``.

    Directory layout: ``manifest.json`` (``{"n", "P", "Q", "samples": [{"probs":
    file, "labels": file}, ...]}``) plus ``probs_<i>.csv`` / ``labels_<i>.csv``,
    each a headerless ``P x Q`` grid (labels as 0/1). Packed: an ``.npz`` with
    arrays ``probs`` (float) and ``labels`` (bool).
    """
    path = Path(path)
    if packed:
        np.savez(path, probs=ds.probs, labels=ds.labels)
        return
    path.mkdir(parents=True, exist_ok=True)
    n, P, Q = ds.probs.shape
    samples = []
    for i in range(n):
        pf, lf = f"probs_{i:05d}.csv", f"labels_{i:05d}.csv"
        _write_grid(path / pf, [[repr(float(v)) for v in row] for row in ds.probs[i]])
        _write_grid(path / lf, [[str(int(v)) for v in row] for row in ds.labels[i]])
        samples.append({"probs": pf, "labels": lf})
    with open(path / "manifest.json", "w") as fh:
        json.dump({"n": n, "P": P, "Q": Q, "samples": samples}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_fields(path: str | Path) -> FieldDataset:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            return FieldDataset(z["probs"].astype(float), z["labels"].astype(bool))
    with open(path / "manifest.json") as fh:
        doc = json.load(fh)
    probs = np.stack([np.loadtxt(path / s["probs"], delimiter=",", ndmin=2) for s in doc["samples"]])
    labels = np.stack([np.loadtxt(path / s["labels"], delimiter=",", ndmin=2) for s in doc["samples"]]).astype(bool)
    if probs.shape != (doc["n"], doc["P"], doc["Q"]) or labels.shape != probs.shape:
        raise ValueError(f"{path}: field shapes disagree with manifest")
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError(f"{path}: probabilities outside [0, 1]")
    return FieldDataset(probs, labels)
