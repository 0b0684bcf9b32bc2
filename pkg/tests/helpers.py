"""Random instance builders shared by unit and acceptance tests."""

import numpy as np

from lcc.engine import LossMatrix, ParamGrid


def nested_set_matrix(rng: np.random.Generator, n: int, grid_size: int, classes: int = 5) -> LossMatrix:
    """Miscoverage of ``C_lambda(x) = {k : f_k(x) >= 1 - lambda}``; rows nonincreasing."""
    grid = ParamGrid(np.round(np.linspace(0.0, 1.0, grid_size), 12))
    probs = rng.dirichlet(np.full(classes, 0.5), size=n)
    labels = rng.integers(0, classes, size=n)
    p_true = probs[np.arange(n), labels]
    values = (p_true[:, None] < 1.0 - grid.values()[None, :]).astype(float)
    return LossMatrix(values, grid)


def graded_nested_matrix(rng: np.random.Generator, n: int, grid_size: int, bound: float = 1.0) -> LossMatrix:
    """Random nonincreasing rows in ``[0, bound]``, with plateaus and exact ties."""
    grid = ParamGrid(np.round(np.linspace(0.0, 1.0, grid_size), 12))
    steps = rng.uniform(size=(n, grid_size)) * (rng.uniform(size=(n, grid_size)) < 0.3)
    rows = np.cumsum(steps[:, ::-1], axis=1)[:, ::-1]
    rows = bound * rows / np.maximum(rows[:, :1], 1e-12) * rng.uniform(size=(n, 1))
    rows = np.round(rows, 2)  # ties between samples
    return LossMatrix(np.minimum(rows, bound), grid)


def random_monotone_instance(rng: np.random.Generator) -> LossMatrix:
    n = int(rng.integers(1, 501))
    g = int(rng.integers(1, 102))
    if rng.uniform() < 0.5:
        return nested_set_matrix(rng, n, g, classes=int(rng.integers(2, 11)))
    return graded_nested_matrix(rng, n, g)
