"""Joint control of several losses with a Bonferroni split of delta."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import (
    CalibrationResult,
    InfeasibleCalibrationError,
    LossMatrix,
    ParamGrid,
    SearchFunction,
    read_loss_matrix,
)
from .quantiles import BoundViolationError, column_quantiles

# Minimum expected number of calibration losses above the 1 - delta/m quantile.
MIN_TAIL_COUNT = 6


@dataclass(frozen=True)
class MultiControlSpec:
    """Per-loss levels ``alphas``, bounds ``bounds`` and a shared ``delta``.

    ``weights`` splits delta across losses (``delta * w_j``); uniform by default.
    """

    alphas: tuple
    delta: float
    bounds: tuple
    weights: tuple | None = None

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        bounds = tuple(float(b) for b in self.bounds)
        if len(alphas) < 1:
            raise ValueError("need at least one loss")
        if len(bounds) != len(alphas):
            raise ValueError(f"{len(alphas)} alphas but {len(bounds)} bounds")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")
        if not all(math.isfinite(a) for a in alphas):
            raise ValueError("alphas must be finite")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "bounds", bounds)
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != len(alphas) or any(x <= 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
                raise ValueError("weights must be positive, one per loss, summing to 1")
            object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, alpha: float, delta: float, m: int, bound: float = 1.0) -> "MultiControlSpec":
        return cls((alpha,) * m, delta, (bound,) * m)

    @property
    def m(self) -> int:
        return len(self.alphas)

    def deltas(self) -> tuple:
        """Per-loss significance levels."""
        if self.weights is None:
            return (self.delta / self.m,) * self.m
        return tuple(self.delta * w for w in self.weights)


@dataclass(frozen=True)
class LossTensor:
    """``values[j, i, k]``: loss ``j`` of sample ``i`` at grid point ``k``.

    ``decomposable`` asserts that loss ``j`` depends on the grid point only
    through coordinate ``j``; see :meth:`check_decomposable`.
    """

    values: np.ndarray
    grid: ParamGrid
    decomposable: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3:
            raise ValueError(f"loss tensor must be 3-D (m, n, G), got shape {vals.shape}")
        if vals.shape[2] != self.grid.size:
            raise ValueError(f"loss tensor has {vals.shape[2]} grid columns for {self.grid.size} grid points")
        if not np.all(np.isfinite(vals)):
            raise ValueError("loss tensor has non-finite entries")
        object.__setattr__(self, "values", vals)
        if self.decomposable and self.grid.dim != vals.shape[0]:
            raise ValueError("a decomposable tensor needs one grid dimension per loss")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def loss_matrix(self, j: int) -> LossMatrix:
        return LossMatrix(self.values[j], self.grid)

    def check_decomposable(self) -> bool:
        """True iff columns sharing coordinate ``j`` carry identical loss-``j`` values."""
        if self.grid.dim != self.m:
            return False
        for j in range(self.m):
            coord = self.grid.points[:, j]
            for v in np.unique(coord):
                cols = self.values[j][:, coord == v]
                if not np.all(cols == cols[:, :1]):
                    return False
        return True

    def coordinate_axes(self) -> list[LossMatrix]:
        """Per-loss matrices over the loss's own coordinate axis."""
        if not self.decomposable:
            raise ValueError("tensor is not flagged decomposable")
        out = []
        for j in range(self.m):
            axis, first = np.unique(self.grid.points[:, j], return_index=True)
            out.append(LossMatrix(self.values[j][:, first], ParamGrid(axis)))
        return out


def _loss_quantiles(values: np.ndarray, bound: float, delta_j: float, ideal: bool) -> np.ndarray:
    if np.max(values) > bound:
        raise BoundViolationError(f"bound violated: loss {float(np.max(values))!r} > B={bound!r}")
    return column_quantiles(values, 1.0 - delta_j, bound=None if ideal else bound)


def multi_quantiles(tensor: LossTensor, spec: MultiControlSpec, ideal: bool = False) -> np.ndarray:
    """``(m, G)`` array of per-loss ``1 - delta_j`` quantiles."""
    if tensor.m != spec.m:
        raise ValueError(f"tensor has {tensor.m} losses, spec has {spec.m}")
    return np.stack(
        [
            _loss_quantiles(tensor.values[j], spec.bounds[j], dj, ideal)
            for j, dj in enumerate(spec.deltas())
        ]
    )


def feasible_mask_multi(tensor: LossTensor, spec: MultiControlSpec, ideal: bool = False) -> np.ndarray:
    q = multi_quantiles(tensor, spec, ideal)
    return np.all(q <= np.asarray(spec.alphas)[:, None], axis=0)


def feasible_set_multi(tensor: LossTensor, spec: MultiControlSpec) -> list:
    """Grid points where every loss quantile is within its level."""
    mask = feasible_mask_multi(tensor, spec)
    return [tensor.grid.point(k) for k in np.flatnonzero(mask)]


def _infeasible_losses(q: np.ndarray, spec: MultiControlSpec) -> list[int]:
    return [j for j in range(spec.m) if not np.any(q[j] <= spec.alphas[j])]


def _raise_infeasible(q: np.ndarray, spec: MultiControlSpec) -> None:
    culprits = _infeasible_losses(q, spec)
    if culprits:
        detail = ", ".join(f"loss {j} (alpha={spec.alphas[j]!r}, min quantile {float(q[j].min())!r})" for j in culprits)
        msg = f"no feasible lambda: individually infeasible losses: {detail}"
    else:
        msg = "no feasible lambda: every loss is feasible alone but their feasible sets do not intersect"
    raise InfeasibleCalibrationError(msg)


@dataclass(frozen=True)
class CoordinateResult:
    """Per-coordinate search outcome over a product grid."""

    lambda_star: tuple
    axes: tuple
    feasible_masks: tuple
    quantiles: tuple
    spec: MultiControlSpec
    mode: str

    def coordinate_feasible(self, j: int) -> list[float]:
        return [float(v) for v in self.axes[j].values()[self.feasible_masks[j]]]


def calibrate_coordinates(
    per_loss: Sequence[LossMatrix], spec: MultiControlSpec, ideal: bool = False
) -> CoordinateResult:
    """Largest feasible value of each coordinate, combined into ``lambda*``.

    ``per_loss[j]`` holds loss ``j`` over its own scalar axis. With ideal set,
    each matrix's last row is the test sample and no bound is appended.
    Avoids materializing the product grid, whose size grows as ``|axis|^m``.
    """
    if len(per_loss) != spec.m:
        raise ValueError(f"{len(per_loss)} loss matrices for {spec.m} losses")
    masks, quants, lam = [], [], []
    for j, (mat, dj) in enumerate(zip(per_loss, spec.deltas())):
        if mat.grid.dim != 1:
            raise ValueError("coordinate search needs scalar axes")
        q = _loss_quantiles(mat.values, spec.bounds[j], dj, ideal)
        mask = q <= spec.alphas[j]
        masks.append(mask)
        quants.append(q)
    if not all(m.any() for m in masks):
        width = max(len(q) for q in quants)
        padded = np.full((spec.m, width), np.inf)
        for j, q in enumerate(quants):
            padded[j, : len(q)] = q
        _raise_infeasible(padded, spec)
    for mat, mask in zip(per_loss, masks):
        lam.append(float(mat.grid.values()[np.flatnonzero(mask)[-1]]))
    return CoordinateResult(
        lambda_star=tuple(lam),
        axes=tuple(m.grid for m in per_loss),
        feasible_masks=tuple(masks),
        quantiles=tuple(quants),
        spec=spec,
        mode="ideal" if ideal else "practical",
    )


def calibrate_multi(
    tensor: LossTensor,
    spec: MultiControlSpec,
    s: SearchFunction | str = "max",
    coordinatewise: bool = False,
    ideal: bool = False,
) -> CalibrationResult:
    """Search the joint feasible set, or per coordinate for decomposable tensors.

    With ``coordinatewise`` the result is the vector of per-coordinate maxima;
    on a full product grid that equals the lexicographic max of the joint set.
    """
    q = multi_quantiles(tensor, spec, ideal)
    mask = np.all(q <= np.asarray(spec.alphas)[:, None], axis=0)
    if not mask.any():
        _raise_infeasible(q, spec)
    if coordinatewise:
        if not tensor.decomposable:
            raise ValueError("coordinatewise search needs a tensor flagged decomposable")
        coord = calibrate_coordinates(tensor.coordinate_axes(), spec, ideal=ideal)
        k = tensor.grid.index(coord.lambda_star)
        name = "coordinate-max"
    else:
        s = SearchFunction.coerce(s)
        k = s.select(tensor.grid, mask)
        name = s.name
    mask.setflags(write=False)
    return CalibrationResult(
        lambda_star=tensor.grid.point(k),
        index=k,
        feasible_mask=mask,
        quantiles=q,
        grid=tensor.grid,
        spec=spec,
        mode="ideal" if ideal else "practical",
        search=name,
        n=tensor.n - 1 if ideal else tensor.n,
        diagnostics={"m": spec.m, "deltas": list(spec.deltas())},
    )


@dataclass(frozen=True)
class Advisory:
    ok: bool
    message: str


def sample_size_advisory(n: int, m: int, delta: float) -> Advisory:
    """Warn when fewer than six calibration losses are expected above the quantile.

    Below that the ``1 - delta/m`` quantile is pinned to the bound ``B``.
    """
    expected = n * delta / m
    if expected + 1e-12 >= MIN_TAIL_COUNT:
        return Advisory(True, f"n*delta/m = {expected:.4g} >= {MIN_TAIL_COUNT}")
    need = math.ceil(MIN_TAIL_COUNT * m / delta - 1e-9)
    return Advisory(
        False,
        f"n*delta/m = {expected:.4g} < {MIN_TAIL_COUNT}: the 1-delta/m loss quantile will mostly "
        f"equal the bound B; use at least {need} calibration samples",
    )


def read_loss_tensor(manifest_path: str | Path) -> tuple[LossTensor, MultiControlSpec]:
    """Load a multi-loss manifest.

    The manifest is JSON: ``{"delta": d, "decomposable": bool, "losses":
    [{"path": ..., "alpha": ..., "bound": ...}, ...]}``; paths are relative
    to the manifest. Every loss file uses the loss-matrix CSV schema over the
    same grid.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        doc = json.load(fh)
    unknown = set(doc) - {"delta", "decomposable", "losses", "weights"}
    if unknown:
        raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
    mats, alphas, bounds = [], [], []
    for entry in doc["losses"]:
        mats.append(read_loss_matrix(manifest_path.parent / entry["path"]))
        alphas.append(float(entry["alpha"]))
        bounds.append(float(entry.get("bound", 1.0)))
    grid = mats[0].grid
    for j, mat in enumerate(mats[1:], start=1):
        if not np.array_equal(mat.grid.points, grid.points):
            raise ValueError(f"loss file {j} has a different grid")
        if mat.n != mats[0].n:
            raise ValueError(f"loss file {j} has {mat.n} samples, expected {mats[0].n}")
    tensor = LossTensor(np.stack([m.values for m in mats]), grid, bool(doc.get("decomposable", False)))
    spec = MultiControlSpec(tuple(alphas), float(doc["delta"]), tuple(bounds), doc.get("weights"))
    return tensor, spec


def write_loss_tensor(tensor: LossTensor, spec: MultiControlSpec, manifest_path: str | Path) -> None:
    from .engine import write_loss_matrix

    manifest_path = Path(manifest_path)
    entries = []
    for j in range(tensor.m):
        name = f"{manifest_path.stem}_loss{j}.csv"
        write_loss_matrix(tensor.loss_matrix(j), manifest_path.parent / name)
        entries.append({"path": name, "alpha": spec.alphas[j], "bound": spec.bounds[j]})
    doc = {"delta": spec.delta, "decomposable": tensor.decomposable, "losses": entries}
    if spec.weights is not None:
        doc["weights"] = list(spec.weights)
    with open(manifest_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
