"""Inductive conformal prediction and its nested-set loss-control (CLCP) variant.

Both serve as standalone baselines and as reduction oracles for the
general engine in :mod:`lcc.engine`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable

import numpy as np

from .engine import ControlSpec, InfeasibleCalibrationError, LossMatrix
from .quantiles import INF_SENTINEL, augmented_quantile, quantile_rank


class NestingViolationError(ValueError):
    """Loss rows are not nonincreasing along the grid."""


@dataclass(frozen=True)
class IcpThreshold:
    q: float
    delta: float

    @property
    def is_sentinel(self) -> bool:
        return self.q == INF_SENTINEL


def icp_calibrate(scores: Iterable[float], delta: float) -> IcpThreshold:
    """``1 - delta`` quantile of the nonconformity scores with +inf appended."""
    s = np.sort(np.asarray(list(scores), dtype=float))
    if s.size == 0:
        raise ValueError("empty sample")
    if not np.all(np.isfinite(s)):
        raise ValueError("nonconformity scores must be finite")
    k = quantile_rank(1.0 - delta, s.size + 1)
    q = INF_SENTINEL if k > s.size else float(s[k - 1])
    return IcpThreshold(q, float(delta))


def icp_predict_set(
    score_fn: Callable[[Any, Any], float], x: Any, labels: Iterable[Any], thr: IcpThreshold
) -> set:
    """Labels whose score at ``x`` does not exceed the threshold."""
    if thr.is_sentinel:
        return set(labels)
    return {y for y in labels if score_fn(x, y) <= thr.q}


def softmax_score(probs_fn: Callable[[Any], np.ndarray]) -> Callable[[Any, int], float]:
    """Nonconformity ``1 - f_k(x)`` for a classifier returning class probabilities."""

    def score(x, k):
        return 1.0 - float(probs_fn(x)[k])

    return score


def check_nesting(matrix: LossMatrix) -> None:
    if matrix.grid.dim != 1:
        raise NestingViolationError("inputs violate CLCP nesting assumptions: grid is not scalar")
    bad = np.argwhere(np.diff(matrix.values, axis=1) > 0)
    if bad.size:
        i, j = bad[0]
        raise NestingViolationError(
            f"inputs violate CLCP nesting assumptions: row {i} increases between grid points {j} and {j + 1}"
        )


def clcp_calibrate(matrix: LossMatrix, spec: ControlSpec) -> float:
    """Smallest grid value whose bound-augmented loss quantile is at most alpha.

    Rows must be nonincreasing along the grid; this is validated, not assumed.
    """
    check_nesting(matrix)
    values = matrix.grid.values()

    def ok(j: int) -> bool:
        return augmented_quantile(matrix.values[:, j], spec.bound, spec.delta) <= spec.alpha

    # nonincreasing rows make the quantile nonincreasing in lambda, so bisect
    lo, hi = 0, len(values) - 1
    if ok(lo):
        return float(values[lo])
    if ok(hi):
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ok(mid):
                hi = mid
            else:
                lo = mid
        return float(values[hi])
    raise InfeasibleCalibrationError(
        f"no feasible lambda: loss level alpha={spec.alpha!r} unreachable at confidence 1-delta={1 - spec.delta:.6g}"
    )
