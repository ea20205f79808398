import numpy as np
import pytest

from ttsem.exceptions import CapacityError, InputError
from ttsem.problems import ProblemSpec, cdr, poisson, zero_problem
from ttsem.reference import assemble_full_system, solve_full
from ttsem.sem import Grid

from conftest import rel_err

ONE = lambda t, x, y, z: np.ones(np.broadcast(t, x, y, z).shape)


def _laplace():
    return ProblemSpec(name="lap", kind="stationary-diffusion", kappa=ONE, forcing=ONE)


def test_kronecker_laplacian_oracle():
    for n in (2, 3, 5):
        grid = Grid.unit(n, time_dependent=False)
        sys = assemble_full_system(_laplace(), grid)
        h = 1.0 / n
        k1 = (2 * np.eye(n - 1) - np.eye(n - 1, k=1) - np.eye(n - 1, k=-1)) / h
        m1 = h / 6 * (4 * np.eye(n - 1) + np.eye(n - 1, k=1) + np.eye(n - 1, k=-1))
        kr = lambda a, b, c: np.kron(a, np.kron(b, c))
        expect = kr(k1, m1, m1) + kr(m1, k1, m1) + kr(m1, m1, k1)
        np.testing.assert_allclose(sys.matrix.toarray(), expect, atol=1e-13)


def test_diffusion_matrix_is_symmetric():
    grid = Grid(6, poisson().grid_bounds(), False)
    a = assemble_full_system(poisson(), grid).matrix
    assert abs(a - a.T).max() <= 1e-13 * abs(a).max()


def test_zero_data_gives_zero_solution():
    p = zero_problem()
    grid = Grid.unit(4)
    sys = assemble_full_system(p, grid)
    assert np.all(sys.rhs == 0)
    assert np.all(solve_full(sys) == 0)


def test_solve_full_residual():
    grid = Grid(6, cdr().grid_bounds(), True)
    sys = assemble_full_system(cdr(), grid)
    u = solve_full(sys, rtol=1e-10)
    assert np.linalg.norm(sys.matrix @ u - sys.rhs) <= 1e-10 * np.linalg.norm(sys.rhs)


def test_capacity_and_axis_checks():
    with pytest.raises(CapacityError):
        assemble_full_system(cdr(), Grid.unit(20), cap=1000)
    with pytest.raises(InputError):
        assemble_full_system(poisson(), Grid.unit(4))


def test_first_order_time_derivative_rows():
    # pure time derivative of u = t on a one-element-per-space-axis grid is the mass of dt u = 1
    p = ProblemSpec(name="dt", kind="linear-cdr", forcing=ONE,
                    boundary=lambda t, x, y, z: t + 0 * x, initial=lambda t, x, y, z: 0 * x)
    grid = Grid.unit(3)
    sys = assemble_full_system(p, grid)
    u_exact = np.broadcast_to(grid.nodes(0)[1:, None, None, None], grid.interior_shape).ravel()
    # with no spatial operator, A u = M (dt u) holds exactly for u linear in t
    assert rel_err(sys.matrix @ u_exact, sys.rhs) < 1e-12
