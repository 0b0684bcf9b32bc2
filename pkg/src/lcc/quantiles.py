"""Conservative empirical quantiles over finite multisets.

Every quantile in the package is the order statistic of rank
``k = ceil(level * N)`` over a multiset of size ``N``, duplicates kept with
multiplicity. No interpolation: an interpolated estimate can fall below the
order statistic and break the finite-sample ``>= 1 - delta`` direction.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

# Stand-in for the +infinity element of conformal score augmentation. Only
# ever used for ordering against finite values.
INF_SENTINEL = math.inf

# Products like level * N that land within this relative distance of an
# integer are snapped to it, so that 0.7 * 10 gives rank 7 and not 8.
_RANK_RTOL = 1e-9


class BoundViolationError(ValueError):
    """A loss exceeded the declared upper bound B."""


def check_level(level: float) -> float:
    level = float(level)
    if not 0.0 < level < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {level!r}")
    return level


def quantile_rank(level: float, size: int) -> int:
    """1-based rank ``ceil(level * size)`` of the conservative quantile."""
    if size < 1:
        raise ValueError("empty sample")
    level = check_level(level)
    r = level * size
    nearest = round(r)
    if abs(r - nearest) <= _RANK_RTOL * max(1.0, abs(r)):
        k = int(nearest)
    else:
        k = math.ceil(r)
    return min(max(k, 1), size)


def conservative_quantile(values: Iterable[float], level: float) -> float:
    """Return the ``ceil(level * N)``-th smallest element of ``values``.

    >>> conservative_quantile([0.1, 0.2, 0.3, 1.0], 0.75)
    0.3
    """
    vals = sorted(float(v) for v in values)
    if not vals:
        raise ValueError("empty sample")
    return vals[quantile_rank(level, len(vals)) - 1]


def _check_bound(losses: np.ndarray, bound: float) -> None:
    if losses.size and np.max(losses) > bound:
        worst = float(np.max(losses))
        raise BoundViolationError(f"bound violated: loss {worst!r} > B={bound!r}")


def augmented_quantile(losses: Iterable[float], bound: float, delta: float) -> float:
    """The ``1 - delta`` quantile of ``losses`` with the bound ``B`` appended."""
    arr = np.asarray(list(losses), dtype=float)
    _check_bound(arr, float(bound))
    return conservative_quantile(np.append(arr, float(bound)), 1.0 - float(delta))


def full_quantile(losses: Iterable[float], delta: float) -> float:
    """The ``1 - delta`` quantile of all ``n + 1`` losses, no augmentation."""
    return conservative_quantile(losses, 1.0 - float(delta))


def column_quantiles(matrix: np.ndarray, level: float, bound: float | None = None) -> np.ndarray:
    """Conservative quantile of every column of an ``(n, G)`` array.

    With ``bound`` given, each column is first augmented by ``bound``
    (and checked against it).
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D loss array, got shape {matrix.shape}")
    if bound is not None:
        _check_bound(matrix, float(bound))
        matrix = np.vstack([matrix, np.full((1, matrix.shape[1]), float(bound))])
    k = quantile_rank(level, matrix.shape[0])
    # partition is enough: only the k-th order statistic is needed
    return np.partition(matrix, k - 1, axis=0)[k - 1]
