import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttsem.cross import cross_on_grid
from ttsem.driver import (
    CSV_FIELDS,
    RunOptions,
    compute_l2_error,
    convergence_study,
    dense_l2_error,
    fit_order,
    rank_study,
    run_experiment,
    write_csv,
)
from ttsem.exceptions import InputError
from ttsem.problems import RANK_STUDY, cdr, poisson, semilinear, zero_problem
from ttsem.sem import Grid
from ttsem.tt import TTVector


def test_l2_norm_of_constant_is_interior_mass_sum():
    grid = Grid.unit(4, time_dependent=False)
    u = TTVector.ones(grid.interior_shape)
    zero = lambda t, x, y, z: 0.0 * x
    err = compute_l2_error(u, zero, grid)
    dense = dense_l2_error(np.ones(grid.n_unknowns), zero, grid)
    assert err == pytest.approx(dense, rel=1e-12)
    # interior 1-D mass sums: 3 rows of h*(1/6 + 4/6 + 1/6) minus the two boundary couplings
    h = 0.25
    s1 = 3 * h - 2 * h / 6
    assert err == pytest.approx(np.sqrt(s1**3), rel=1e-12)


def test_zero_problem_has_zero_error():
    rep = run_experiment(zero_problem(), 4, "tt")
    assert rep.ok
    assert rep.error == 0.0


@pytest.mark.parametrize("n", [4, 8])
@pytest.mark.parametrize("maker", [poisson, cdr, semilinear])
def test_formats_agree(maker, n):
    opts = RunOptions(tt_tol=1e-10, solver_tol=1e-8)
    errs = {fmt: run_experiment(maker(), n, fmt, opts) for fmt in ("full", "tt", "qtt")}
    assert all(r.ok for r in errs.values()), {k: r.warnings for k, r in errs.items()}
    full = errs["full"].error
    for fmt in ("tt", "qtt"):
        assert abs(errs[fmt].error - full) <= 5 * opts.solver_tol * full
    assert abs(errs["qtt"].error - errs["tt"].error) <= 5 * opts.solver_tol * errs["tt"].error


def test_fit_order():
    ns = [8, 16, 32]
    assert fit_order(ns, [3.0 / n**2 for n in ns]) == pytest.approx(2.0)
    assert np.isnan(fit_order(ns, [1.0, 0.0, 1.0]))
    with pytest.raises(InputError):
        fit_order([8], [1.0])


def test_convergence_study_rows(tmp_path):
    table = convergence_study(poisson(), [4, 8], "tt", RunOptions(tt_tol=1e-10, solver_tol=1e-8))
    rows = table.rows()
    assert [r["N"] for r in rows] == [4, 8]
    assert all(r["order"] == f"{table.order:.4f}" for r in rows)
    path = write_csv(tmp_path / "out.csv", rows, CSV_FIELDS)
    with path.open() as fh:
        back = list(csv.DictReader(fh))
    assert list(back[0]) == CSV_FIELDS
    assert float(back[1]["error"]) < float(back[0]["error"])


def test_bad_format_and_grid():
    with pytest.raises(InputError):
        run_experiment(poisson(), 4, "dense")
    with pytest.raises(InputError):
        run_experiment(poisson(), 1, "tt")


def test_full_grid_cap_is_reported_not_raised():
    rep = run_experiment(cdr(), 12, "full", RunOptions(cap=100))
    assert rep.failed_stage == "assembly"
    assert not rep.ok


def test_rank_study_small_grid():
    rows = rank_study(RANK_STUDY[:2], grids=(9,))
    assert rows[0]["kappa_ranks"] == "[1,1]" and rows[0]["op_ranks_N9"] == "[2,2]"
    assert rows[1]["kappa_ranks"] == "[2,2]" and rows[1]["op_ranks_N9"] == "[4,4]"


@settings(max_examples=10)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_l2_error_is_a_norm(seed, alpha):
    grid = Grid.unit(4)
    rng = np.random.default_rng(seed)
    shape = grid.interior_shape
    ranks = [1, 2, 2, 2, 1]
    e = TTVector([rng.standard_normal((ranks[k], n, ranks[k + 1])) for k, n in enumerate(shape)])
    zero = lambda t, x, y, z: 0.0 * x
    a = compute_l2_error(e, zero, grid)
    b = compute_l2_error(alpha * e, zero, grid)
    assert a > 0
    assert b == pytest.approx(alpha * a, rel=1e-10)
    assert compute_l2_error(TTVector.zeros(shape), zero, grid) == 0.0


def test_interpolant_has_no_error():
    p = cdr()
    grid = Grid(6, p.grid_bounds(), True)
    u = cross_on_grid(p.exact, grid, tol=1e-12, interior=True).train
    assert compute_l2_error(u, p.exact, grid) <= 10 * 1e-12 * u.norm()
