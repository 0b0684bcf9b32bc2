"""Concrete parameterized predictors and their losses.

Two families:

* selective regression: predict ``f(x)`` when the uncertainty score
  ``g(x) <= lambda``, abstain otherwise; loss ``(y - f(x))^2`` when
  predicting and 0 when abstaining.
* probability-field thresholding: the cell set ``{(p, q): prob >= lambda}``
  scored by the false-discovery loss ``1 - |y & F| / |F|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class SelectiveOutput:
    """A point prediction, or an abstention when ``value`` is None."""

    value: float | None = None

    @property
    def abstained(self) -> bool:
        return self.value is None


ABSTAIN = SelectiveOutput(None)


@dataclass(frozen=True)
class SelectivePredictor:
    mean_fn: Callable[[Any], float]
    soft_selector: Callable[[Any], float]
    threshold: float


def selective_predict(pred: SelectivePredictor, x: Any) -> SelectiveOutput:
    # inclusive: a score equal to the threshold still predicts
    if pred.soft_selector(x) <= pred.threshold:
        return SelectiveOutput(float(pred.mean_fn(x)))
    return ABSTAIN


def selective_loss(y: float, out: SelectiveOutput, f_val: float) -> float:
    if out.abstained:
        return 0.0
    d = float(y) - float(f_val)
    return d * d


@dataclass(frozen=True)
class MultiSelectivePredictor:
    """``m`` selective regressors sharing an input; threshold ``j`` gates target ``j``."""

    mean_fn: Callable[[Any], Sequence[float]]
    soft_selector: Callable[[Any], Sequence[float]]
    thresholds: tuple


def multi_selective_predict(pred: MultiSelectivePredictor, x: Any) -> list[SelectiveOutput]:
    f = np.atleast_1d(np.asarray(pred.mean_fn(x), dtype=float))
    g = np.atleast_1d(np.asarray(pred.soft_selector(x), dtype=float))
    lam = tuple(pred.thresholds)
    if not (len(f) == len(g) == len(lam)):
        raise ValueError(f"dimension mismatch: {len(f)} means, {len(g)} scores, {len(lam)} thresholds")
    return [SelectiveOutput(float(fj)) if gj <= lj else ABSTAIN for fj, gj, lj in zip(f, g, lam)]


def multi_selective_loss(y: Sequence[float], outputs: Sequence[SelectiveOutput], f_vals: Sequence[float]) -> np.ndarray:
    if not (len(y) == len(outputs) == len(f_vals)):
        raise ValueError(f"dimension mismatch: {len(y)} labels, {len(outputs)} outputs, {len(f_vals)} means")
    return np.array([selective_loss(yj, oj, fj) for yj, oj, fj in zip(y, outputs, f_vals)])


def max_loss(losses: Sequence[float]) -> float:
    return float(np.max(losses))


def miscoverage(outputs: Sequence[SelectiveOutput]) -> float:
    """Fraction of abstentions."""
    if len(outputs) == 0:
        raise ValueError("no outputs")
    return sum(o.abstained for o in outputs) / len(outputs)


def selective_loss_matrix(y: np.ndarray, f: np.ndarray, g: np.ndarray, grid_values: np.ndarray) -> np.ndarray:
    """``(n, G)`` losses ``(y - f)^2 * [g <= lambda_j]`` for a scalar grid."""
    y, f, g = (np.asarray(a, dtype=float).ravel() for a in (y, f, g))
    d = y - f
    sq = d * d
    return sq[:, None] * (g[:, None] <= np.asarray(grid_values, dtype=float)[None, :])


# -- probability fields ---------------------------------------------------


@dataclass(frozen=True)
class GridPredictionSet:
    """A set of cells on a ``P x Q`` grid, stored as a boolean mask."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise ValueError("cell mask must be 2-D")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def from_cells(cls, shape: tuple[int, int], cells: Iterable[tuple[int, int]]) -> "GridPredictionSet":
        m = np.zeros(shape, dtype=bool)
        for p, q in cells:
            if not (0 <= p < shape[0] and 0 <= q < shape[1]):
                raise ValueError(f"cell {(p, q)} outside a {shape} grid")
            m[p, q] = True
        return cls(m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def cells(self) -> set[tuple[int, int]]:
        return {(int(p), int(q)) for p, q in np.argwhere(self.mask)}

    def __len__(self) -> int:
        return int(self.mask.sum())


def segmentation_threshold(probs: np.ndarray, lam: float) -> GridPredictionSet:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2:
        raise ValueError("probability field must be 2-D")
    return GridPredictionSet(probs >= lam)


def false_discovery_loss(y: GridPredictionSet, F: GridPredictionSet) -> float:
    """One minus precision; an empty prediction has no false discoveries (loss 0)."""
    if y.shape != F.shape:
        raise ValueError(f"grid mismatch: label {y.shape}, prediction {F.shape}")
    size = len(F)
    if size == 0:
        return 0.0
    return 1.0 - float(np.sum(y.mask & F.mask)) / size


def normalized_size(F: GridPredictionSet) -> float:
    P, Q = F.shape
    return len(F) / (P * Q)


def _threshold_counts(probs: np.ndarray, labels: np.ndarray, grid_values: np.ndarray):
    """Per sample and threshold: ``|F|`` and ``|y & F|`` for ``F = {prob >= lambda}``."""
    n = probs.shape[0]
    flat_p = probs.reshape(n, -1).astype(float)
    flat_y = labels.reshape(n, -1).astype(bool)
    cells = flat_p.shape[1]
    order = np.argsort(-flat_p, axis=1)
    p_desc = np.take_along_axis(flat_p, order, axis=1)
    y_desc = np.take_along_axis(flat_y, order, axis=1)
    hits_cum = np.concatenate([np.zeros((n, 1), dtype=np.int64), np.cumsum(y_desc, axis=1)], axis=1)
    lam = np.asarray(grid_values, dtype=float)
    p_asc = p_desc[:, ::-1]
    sizes = np.empty((n, lam.size), dtype=np.int64)
    for i in range(n):
        sizes[i] = cells - np.searchsorted(p_asc[i], lam, side="left")
    hits = np.take_along_axis(hits_cum, sizes, axis=1)
    return sizes, hits


def field_loss_matrix(probs: np.ndarray, labels: np.ndarray, grid_values: np.ndarray) -> np.ndarray:
    """``(n, G)`` false-discovery losses of thresholded fields, vectorized."""
    sizes, hits = _threshold_counts(np.asarray(probs), np.asarray(labels), grid_values)
    with np.errstate(invalid="ignore", divide="ignore"):
        loss = np.where(sizes > 0, 1.0 - hits / np.maximum(sizes, 1), 0.0)
    return loss


def field_size_matrix(probs: np.ndarray, grid_values: np.ndarray) -> np.ndarray:
    """``(n, G)`` normalized prediction-set sizes."""
    probs = np.asarray(probs)
    sizes, _ = _threshold_counts(probs, np.zeros(probs.shape, dtype=bool), grid_values)
    return sizes / (probs.shape[1] * probs.shape[2])
