"""Grid calibration with a bound-augmented loss quantile.

The engine materializes the loss of every calibration sample at every grid
point, keeps the grid points whose bound-augmented ``1 - delta`` loss
quantile is at most ``alpha``, and hands that feasible set to a search
function fixed in advance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .quantiles import BoundViolationError, column_quantiles

GridPoint = Any  # float for scalar grids, tuple of floats otherwise


class InfeasibleCalibrationError(ValueError):
    """No grid point reaches the requested loss level."""


class LossEvaluationError(ValueError):
    """The loss function returned a non-finite value."""


@dataclass(frozen=True)
class ParamGrid:
    """Candidate parameter values, sorted lexicographically ascending.

    ``points`` is a ``(G, d)`` float array. Duplicates are rejected.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ValueError("parameter grid must be a nonempty list of points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        order = np.lexsort(pts.T[::-1])
        pts = pts[order]
        if pts.shape[0] > 1 and np.any(np.all(pts[1:] == pts[:-1], axis=1)):
            raise ValueError("duplicate grid points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def linspace(cls, start: float, stop: float, step: float) -> "ParamGrid":
        """Scalar grid ``start, start+step, ..., stop`` (stop included when on-step)."""
        if step <= 0:
            raise ValueError("grid step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        if count < 1:
            raise ValueError(f"empty grid {start}:{stop}:{step}")
        # rounding keeps 0.07 from turning into 0.07000000000000001
        vals = np.round(start + step * np.arange(count), 12)
        return cls(vals)

    @classmethod
    def parse(cls, text: str) -> "ParamGrid":
        """Parse ``"start:stop:step"``."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid spec must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        return cls.linspace(start, stop, step)

    @classmethod
    def product(cls, axes: Sequence[Sequence[float]]) -> "ParamGrid":
        """Cartesian product of per-dimension value lists."""
        mesh = np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij")
        return cls(np.stack([m.ravel() for m in mesh], axis=1))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.size

    def values(self) -> np.ndarray:
        """1-D view of a scalar grid."""
        if self.dim != 1:
            raise ValueError("values() needs a scalar grid")
        return self.points[:, 0]

    def point(self, j: int) -> GridPoint:
        row = self.points[j]
        if self.dim == 1:
            return float(row[0])
        return tuple(float(v) for v in row)

    def all_points(self) -> list[GridPoint]:
        return [self.point(j) for j in range(self.size)]

    def index(self, pt: GridPoint) -> int:
        target = np.atleast_1d(np.asarray(pt, dtype=float))
        hits = np.flatnonzero(np.all(self.points == target, axis=1))
        if hits.size == 0:
            raise KeyError(f"{pt!r} is not a grid point")
        return int(hits[0])

    def labels(self) -> list[str]:
        return [";".join(repr(float(v)) for v in row) for row in self.points]


@dataclass(frozen=True)
class ControlSpec:
    """Target ``P(loss <= alpha) >= 1 - delta`` for losses bounded by ``bound``."""

    alpha: float
    delta: float
    bound: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if not math.isfinite(self.bound):
            raise ValueError("bound must be finite")


@dataclass(frozen=True)
class LossMatrix:
    """``values[i, j]`` is the loss of calibration sample ``i`` at grid point ``j``."""

    values: np.ndarray
    grid: ParamGrid

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise ValueError(f"loss matrix must be 2-D, got shape {vals.shape}")
        if vals.shape[1] != self.grid.size:
            raise ValueError(f"loss matrix has {vals.shape[1]} columns for {self.grid.size} grid points")
        if vals.shape[0] == 0:
            raise ValueError("loss matrix has no samples")
        if not np.all(np.isfinite(vals)):
            i, j = np.argwhere(~np.isfinite(vals))[0]
            raise LossEvaluationError(f"non-finite loss at sample {i}, grid point {j}")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def check_bound(self, bound: float) -> None:
        if np.max(self.values) > bound:
            i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
            raise BoundViolationError(
                f"bound violated: loss {self.values[i, j]!r} at sample {i}, grid point {j} exceeds B={bound!r}"
            )

    def with_row(self, row: Sequence[float]) -> "LossMatrix":
        """Copy with one extra sample appended (e.g. the test point)."""
        return LossMatrix(np.vstack([self.values, np.asarray(row, dtype=float)[None, :]]), self.grid)


class SearchFunction:
    """A map from a nonempty set of grid points to one of its members.

    ``kind`` is ``"min"``, ``"max"``, ``"first"`` or ``"external"``. For scalar
    grids min/first pick the smallest feasible value and max the largest;
    for vector grids the order is lexicographic. An external search wraps a
    callable receiving the feasible points in grid order; it must be fixed
    before calibration data is seen, which the engine cannot check.
    """

    KINDS = ("min", "max", "first", "external")

    def __init__(self, kind: str = "min", func: Callable[[list], Any] | None = None, name: str | None = None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown search kind {kind!r}; expected one of {self.KINDS}")
        if (kind == "external") != (func is not None):
            raise ValueError("a callable is required for (and only for) external search")
        self.kind = kind
        self.func = func
        self.name = name or (getattr(func, "__name__", "external") if func else kind)

    @classmethod
    def coerce(cls, s: "SearchFunction | str | Callable") -> "SearchFunction":
        if isinstance(s, SearchFunction):
            return s
        if isinstance(s, str):
            return cls(s)
        if callable(s):
            return cls("external", s)
        raise TypeError(f"cannot use {s!r} as a search function")

    def select(self, grid: ParamGrid, mask: np.ndarray) -> int:
        """Index of the chosen grid point among those where ``mask`` holds."""
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise ValueError("search over an empty set")
        if self.kind in ("min", "first"):
            return int(idx[0])
        if self.kind == "max":
            return int(idx[-1])
        candidates = [grid.point(j) for j in idx]
        choice = self.func(candidates)
        try:
            j = grid.index(choice)
        except KeyError:
            raise ValueError(f"external search {self.name!r} returned {choice!r}, not a grid point") from None
        if not mask[j]:
            raise ValueError(f"external search {self.name!r} returned {choice!r}, outside the feasible set")
        return j

    def __repr__(self):
        return f"SearchFunction({self.name!r})"


@dataclass(frozen=True)
class CalibrationResult:
    lambda_star: GridPoint
    index: int
    feasible_mask: np.ndarray
    quantiles: np.ndarray
    grid: ParamGrid
    spec: Any
    mode: str
    search: str
    n: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> list[GridPoint]:
        return [self.grid.point(j) for j in np.flatnonzero(self.feasible_mask)]

    @property
    def feasible_size(self) -> int:
        return int(self.feasible_mask.sum())

    def to_dict(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "mode": self.mode,
            "search": self.search,
            "n": self.n,
            "alpha": getattr(self.spec, "alpha", None),
            "delta": self.spec.delta,
            "bound": getattr(self.spec, "bound", None),
            "feasible_size": self.feasible_size,
            "grid_size": self.grid.size,
            "diagnostics": self.diagnostics,
        }


def compute_loss_matrix(
    predict: Callable[[GridPoint, Any], Any],
    loss: Callable[[Any, Any], float],
    samples: Sequence[tuple[Any, Any]],
    grid: ParamGrid,
) -> LossMatrix:
    """Evaluate ``loss(y_i, predict(lambda_j, x_i))`` on every (sample, grid point) pair."""
    if len(samples) == 0:
        raise ValueError("no calibration samples")
    points = grid.all_points()
    out = np.empty((len(samples), len(points)))
    for i, (x, y) in enumerate(samples):
        for j, lam in enumerate(points):
            v = float(loss(y, predict(lam, x)))
            if not math.isfinite(v):
                raise LossEvaluationError(f"non-finite loss {v!r} at sample {i}, grid point {j}")
            out[i, j] = v
    return LossMatrix(out, grid)


def practical_quantiles(matrix: LossMatrix, spec: ControlSpec) -> np.ndarray:
    """Per-grid-point ``1 - delta`` quantile of the calibration losses plus ``B``."""
    matrix.check_bound(spec.bound)
    return column_quantiles(matrix.values, 1.0 - spec.delta, bound=spec.bound)


def feasible_mask(matrix: LossMatrix, spec: ControlSpec) -> np.ndarray:
    return practical_quantiles(matrix, spec) <= spec.alpha


def feasible_set(matrix: LossMatrix, spec: ControlSpec) -> list[GridPoint]:
    """Grid points whose bound-augmented loss quantile is at most ``alpha``."""
    mask = feasible_mask(matrix, spec)
    return [matrix.grid.point(j) for j in np.flatnonzero(mask)]


def _infeasible_message(spec: ControlSpec, quantiles: np.ndarray) -> str:
    return (
        f"no feasible lambda: loss level alpha={spec.alpha!r} unreachable at confidence "
        f"1-delta={1.0 - spec.delta:.6g} (smallest loss quantile over the grid is {float(np.min(quantiles))!r})"
    )


def _finish(matrix, spec, s, quantiles, mode) -> CalibrationResult:
    s = SearchFunction.coerce(s)
    mask = quantiles <= spec.alpha
    if not mask.any():
        raise InfeasibleCalibrationError(_infeasible_message(spec, quantiles))
    j = s.select(matrix.grid, mask)
    mask.setflags(write=False)
    quantiles.setflags(write=False)
    return CalibrationResult(
        lambda_star=matrix.grid.point(j),
        index=j,
        feasible_mask=mask,
        quantiles=quantiles,
        grid=matrix.grid,
        spec=spec,
        mode=mode,
        search=s.name,
        n=matrix.n if mode == "practical" else matrix.n - 1,
        diagnostics={"search_kind": s.kind, "min_quantile": float(np.min(quantiles))},
    )


def calibrate(matrix: LossMatrix, spec: ControlSpec, s: SearchFunction | str = "min") -> CalibrationResult:
    """Choose ``lambda* = s({lambda : Q_n(lambda) <= alpha})`` from calibration losses.

    Raises :class:`InfeasibleCalibrationError` when the feasible set is empty.
    """
    return _finish(matrix, spec, s, practical_quantiles(matrix, spec), "practical")


def ideal_quantiles(matrix_with_test: LossMatrix, spec: ControlSpec) -> np.ndarray:
    if matrix_with_test.n < 2:
        raise ValueError("ideal mode needs calibration rows plus the test row")
    matrix_with_test.check_bound(spec.bound)
    return column_quantiles(matrix_with_test.values, 1.0 - spec.delta)


def calibrate_ideal(matrix_with_test: LossMatrix, spec: ControlSpec, s: SearchFunction | str = "min") -> CalibrationResult:
    """Oracle variant whose last row is the test sample's losses.

    Feasibility uses the plain quantile of all ``n + 1`` rows. Only
    meaningful for validating the guarantee, since it needs the test label.
    """
    return _finish(matrix_with_test, spec, s, ideal_quantiles(matrix_with_test, spec), "ideal")


# -- CSV interchange ------------------------------------------------------


class LossMatrixFormatError(ValueError):
    pass


def write_loss_matrix(matrix: LossMatrix, path: str | Path) -> None:
    """Header lists grid points (``;`` joins coordinates), one row per sample."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(matrix.grid.labels())
        for row in matrix.values:
            w.writerow([repr(float(v)) for v in row])


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise LossMatrixFormatError(f"{where}: cannot parse {text!r} as a number") from None


def read_loss_matrix(path: str | Path) -> LossMatrix:
    """Read a loss matrix CSV; columns are reordered to grid order if needed."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise LossMatrixFormatError(f"{path}: empty file")
    header = rows[0]
    dims = {len(h.split(";")) for h in header}
    if len(dims) != 1:
        raise LossMatrixFormatError(f"{path}: header mixes grid points of different dimension")
    pts = [
        [_parse_float(c.strip(), f"{path}: header column {j + 1}") for c in h.split(";")]
        for j, h in enumerate(header)
    ]
    raw = np.asarray(pts, dtype=float)
    grid = ParamGrid(raw)
    if len(rows) < 2:
        raise LossMatrixFormatError(f"{path}: no sample rows")
    vals = np.empty((len(rows) - 1, len(header)))
    for i, r in enumerate(rows[1:]):
        if len(r) != len(header):
            raise LossMatrixFormatError(f"{path}: row {i + 2} has {len(r)} columns, header has {len(header)}")
        for j, c in enumerate(r):
            v = _parse_float(c.strip(), f"{path}: row {i + 2}, column {j + 1}")
            if not math.isfinite(v):
                raise LossMatrixFormatError(f"{path}: row {i + 2}, column {j + 1}: non-finite loss {c!r}")
            vals[i, j] = v
    order = [grid.index(tuple(p) if len(p) > 1 else p[0]) for p in raw]
    reordered = np.empty_like(vals)
    reordered[:, order] = vals
    return LossMatrix(reordered, grid)
