import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lcc.engine import (
    ControlSpec,
    InfeasibleCalibrationError,
    LossEvaluationError,
    LossMatrix,
    LossMatrixFormatError,
    ParamGrid,
    SearchFunction,
    calibrate,
    calibrate_ideal,
    compute_loss_matrix,
    feasible_set,
    ideal_quantiles,
    read_loss_matrix,
    write_loss_matrix,
)
from lcc.predictors import SelectivePredictor, selective_loss, selective_predict
from lcc.quantiles import BoundViolationError


def constant_column_matrix(n=100):
    grid = ParamGrid.linspace(0.0, 1.0, 0.01)
    return LossMatrix(np.tile(1.0 - grid.values(), (n, 1)), grid)


# -- grid ------------------------------------------------------------------------


def test_grid_sorted_and_deduplicated():
    g = ParamGrid([0.3, 0.1, 0.2])
    assert g.all_points() == [0.1, 0.2, 0.3]
    with pytest.raises(ValueError, match="duplicate"):
        ParamGrid([0.1, 0.1])
    with pytest.raises(ValueError):
        ParamGrid([])


def test_grid_linspace_and_parse():
    g = ParamGrid.parse("0:1:0.01")
    assert g.size == 101
    assert g.point(7) == 0.07
    assert g.point(100) == 1.0


def test_vector_grid_lexicographic():
    g = ParamGrid.product([[0.2, 0.1], [1.0, 0.0]])
    assert g.all_points() == [(0.1, 0.0), (0.1, 1.0), (0.2, 0.0), (0.2, 1.0)]
    assert g.index((0.2, 0.0)) == 2


# -- loss matrix -----------------------------------------------------------------


def test_oracle_predictor_gives_zero_matrix():
    grid = ParamGrid([0.0, 0.5, 1.0])
    samples = [(i, i % 3) for i in range(10)]
    m = compute_loss_matrix(lambda lam, x: x % 3, lambda y, p: float(y != p), samples, grid)
    assert np.all(m.values == 0.0)


def test_selective_matrix_by_hand():
    # (f, g, y) per sample; loss (y - f)^2 when g <= lambda
    samples = [((0.4, 0.1), 0.9), ((0.5, 0.15), 0.8), ((0.2, 0.05), 0.0)]
    grid = ParamGrid([0.1, 0.2])

    def predict(lam, x):
        pred = SelectivePredictor(lambda x: x[0], lambda x: x[1], lam)
        return selective_predict(pred, x), x[0]

    def loss(y, out):
        return selective_loss(y, *out)

    m = compute_loss_matrix(predict, loss, samples, grid)
    assert m.values == pytest.approx(np.array([[0.25, 0.25], [0.0, 0.09], [0.04, 0.04]]))


def test_nested_set_rows_nonincreasing():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(4), size=30)
    labels = rng.integers(0, 4, size=30)
    grid = ParamGrid.linspace(0, 1, 0.05)
    samples = list(zip(range(30), labels))

    def predict(lam, i):  # C_lambda(x) = {k : f_k(x) >= 1 - lambda}
        return {k for k in range(4) if probs[i, k] >= 1 - lam}

    m = compute_loss_matrix(predict, lambda y, c: float(y not in c), samples, grid)
    assert np.all(np.diff(m.values, axis=1) <= 0)


def test_non_finite_loss_reports_cell():
    grid = ParamGrid([0.0, 1.0])

    def loss(y, p):
        return float("nan") if (y, p) == (0, 1.0) else 0.0

    with pytest.raises(LossEvaluationError, match=r"sample 1, grid point 1"):
        compute_loss_matrix(lambda lam, x: lam, loss, [(None, 1), (None, 0)], grid)


# -- feasible set / calibrate -----------------------------------------------------


def test_alpha_at_bound_makes_everything_feasible(scalar_grid):
    rng = np.random.default_rng(1)
    m = LossMatrix(rng.uniform(size=(20, scalar_grid.size)), scalar_grid)
    assert len(feasible_set(m, ControlSpec(1.0, 0.1, 1.0))) == scalar_grid.size


def test_alpha_below_all_quantiles_is_empty(scalar_grid):
    m = LossMatrix(np.full((20, scalar_grid.size), 0.5), scalar_grid)
    assert feasible_set(m, ControlSpec(0.4, 0.1, 1.0)) == []


def test_constant_columns_feasible_from_0_8():
    # Q(lambda) = 1 - lambda since rank ceil(0.9 * 101) = 91 <= 100
    m = constant_column_matrix()
    feas = feasible_set(m, ControlSpec(0.2, 0.1, 1.0))
    assert feas == [round(0.8 + 0.01 * i, 2) for i in range(21)]
    assert calibrate(m, ControlSpec(0.2, 0.1, 1.0), "max").lambda_star == 1.0
    assert calibrate(m, ControlSpec(0.2, 0.1, 1.0), "min").lambda_star == 0.8


def test_singleton_grid():
    grid = ParamGrid([0.3])
    m = LossMatrix(np.zeros((5, 1)), grid)
    for s in ("min", "max", "first", SearchFunction("external", lambda pts: pts[-1])):
        assert calibrate(m, ControlSpec(0.1, 0.2, 1.0), s).lambda_star == 0.3


def test_infeasible_raises_with_message():
    grid = ParamGrid([0.0, 1.0])
    m = LossMatrix(np.full((50, 2), 0.9), grid)
    with pytest.raises(InfeasibleCalibrationError, match="no feasible lambda"):
        calibrate(m, ControlSpec(0.1, 0.1, 1.0))


def test_bound_checked():
    grid = ParamGrid([0.0, 1.0])
    m = LossMatrix(np.array([[0.1, 1.2]]), grid)
    with pytest.raises(BoundViolationError):
        calibrate(m, ControlSpec(0.5, 0.1, 1.0))


def test_external_search_is_validated():
    m = constant_column_matrix()
    spec = ControlSpec(0.2, 0.1, 1.0)
    res = calibrate(m, spec, SearchFunction("external", lambda pts: pts[len(pts) // 2], name="middle"))
    assert res.lambda_star == 0.9
    assert res.search == "middle"
    with pytest.raises(ValueError, match="outside the feasible set"):
        calibrate(m, spec, SearchFunction("external", lambda pts: 0.1))
    with pytest.raises(ValueError, match="not a grid point"):
        calibrate(m, spec, SearchFunction("external", lambda pts: 0.805))


def test_ideal_with_bound_row_equals_practical():
    rng = np.random.default_rng(5)
    grid = ParamGrid.linspace(0, 1, 0.1)
    m = LossMatrix(rng.uniform(size=(40, grid.size)) * grid.values(), grid)
    spec = ControlSpec(0.5, 0.15, 1.0)
    a = calibrate(m, spec, "max")
    b = calibrate_ideal(m.with_row(np.full(grid.size, 1.0)), spec, "max")
    assert a.lambda_star == b.lambda_star
    assert np.array_equal(a.feasible_mask, b.feasible_mask)
    assert b.mode == "ideal" and a.mode == "practical"


def test_ideal_by_hand():
    # columns: [0.1, 0.4, 0.2 | test 0.3] and [0.5, 0.1, 0.0 | test 0.2]; delta=0.25 -> rank 3 of 4
    grid = ParamGrid([0.0, 1.0])
    cal = LossMatrix(np.array([[0.1, 0.5], [0.4, 0.1], [0.2, 0.0]]), grid)
    spec = ControlSpec(0.25, 0.25, 1.0)
    res = calibrate_ideal(cal.with_row([0.3, 0.2]), spec)
    assert res.quantiles.tolist() == [0.3, 0.2]
    assert res.feasible == [1.0]
    with pytest.raises(InfeasibleCalibrationError):
        calibrate(cal, spec)


matrices = hnp.arrays(float, st.tuples(st.integers(1, 30), st.integers(1, 12)), elements=st.floats(0, 1))


@given(matrices, st.floats(0, 1), st.sampled_from([0.05, 0.1, 0.2, 0.3]), hnp.arrays(float, 12, elements=st.floats(0, 1)))
def test_practical_feasible_subset_of_ideal(values, alpha, delta, test_row):
    grid = ParamGrid(np.arange(values.shape[1]) / 10)
    m = LossMatrix(values, grid)
    spec = ControlSpec(alpha, delta, 1.0)
    practical = set(feasible_set(m, spec))
    q = ideal_quantiles(m.with_row(test_row[: grid.size]), spec)
    ideal = {p for p, ok in zip(grid.all_points(), q <= alpha) if ok}
    assert practical <= ideal


@given(matrices, st.floats(0, 1), st.floats(0, 1), st.sampled_from([0.05, 0.1]), st.sampled_from([0.2, 0.3]))
def test_larger_alpha_or_delta_never_shrinks(values, a1, a2, d1, d2):
    grid = ParamGrid(np.arange(values.shape[1]) / 10)
    m = LossMatrix(values, grid)
    lo, hi = sorted((a1, a2))
    assert set(feasible_set(m, ControlSpec(lo, d1))) <= set(feasible_set(m, ControlSpec(hi, d1)))
    assert set(feasible_set(m, ControlSpec(lo, d1))) <= set(feasible_set(m, ControlSpec(lo, d2)))


@given(matrices, st.floats(0, 1), st.sampled_from(["min", "max", "first"]))
def test_lambda_star_in_feasible_and_deterministic(values, alpha, kind):
    grid = ParamGrid(np.arange(values.shape[1]) / 10)
    m = LossMatrix(values, grid)
    spec = ControlSpec(alpha, 0.1)
    try:
        r1 = calibrate(m, spec, kind)
    except InfeasibleCalibrationError:
        assert feasible_set(m, spec) == []
        return
    r2 = calibrate(LossMatrix(values.copy(), grid), spec, kind)
    assert r1.lambda_star in r1.feasible
    assert r1.lambda_star == r2.lambda_star
    assert np.array_equal(r1.quantiles, r2.quantiles)
    assert np.all(r1.quantiles[r1.feasible_mask] <= alpha)


# -- CSV -------------------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    grid = ParamGrid.product([[0.0, 0.5], [0.1, 0.2, 0.3]])
    m = LossMatrix(rng.uniform(size=(7, grid.size)), grid)
    path = tmp_path / "m.csv"
    write_loss_matrix(m, path)
    back = read_loss_matrix(path)
    assert np.array_equal(back.values, m.values)
    assert np.array_equal(back.grid.points, grid.points)
    assert path.read_text().splitlines()[0].startswith("0.0;0.1,0.0;0.2")


def test_csv_columns_reordered(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("0.5,0.0\n1,2\n3,4\n")
    m = read_loss_matrix(path)
    assert m.grid.all_points() == [0.0, 0.5]
    assert m.values.tolist() == [[2, 1], [4, 3]]


@pytest.mark.parametrize(
    "text, match",
    [
        ("0.0,0.5\n1,x\n", "row 2, column 2"),
        ("0.0,0.5\n1\n", "row 2 has 1 columns"),
        ("0.0,abc\n1,2\n", "header column 2"),
        ("0.0,0.5\n", "no sample rows"),
        ("0.0,0.5\n1,nan\n", "non-finite"),
    ],
)
def test_csv_errors(tmp_path, text, match):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(LossMatrixFormatError, match=match):
        read_loss_matrix(path)
