import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttsem.driver import RunOptions, build_tt_system
from ttsem.exceptions import InputError, ShapeMismatchError, SolverError
from ttsem.problems import semilinear
from ttsem.sem import Grid
from ttsem.solve import SemilinearSystem, SolverOptions, als_solve, newton_solve, tt_residual_norm
from ttsem.tt import TTMatrix, TTVector, tt_axpy, ttmat_apply

from conftest import rel_err


def _spd(rng, n):
    q = rng.standard_normal((n, n))
    return q @ q.T + n * np.eye(n)


def test_identity_system(rng):
    b = TTVector([rng.standard_normal(s) for s in [(1, 4, 2), (2, 5, 2), (2, 3, 1)]])
    x, st_ = als_solve(TTMatrix.identity([4, 5, 3]), b, SolverOptions(solver_tol=1e-10, tt_tol=1e-12))
    assert st_.converged
    assert rel_err(x.to_dense(), b.to_dense()) < 1e-9


@settings(max_examples=10)
@given(st.integers(0, 2**31 - 1))
def test_kronecker_spd_matches_dense_solve(seed):
    rng = np.random.default_rng(seed)
    factors = [_spd(rng, 5) for _ in range(4)]
    a = TTMatrix.from_factors(factors)
    b = TTVector([rng.standard_normal(s) for s in [(1, 5, 2), (2, 5, 2), (2, 5, 2), (2, 5, 1)]])
    x, st_ = als_solve(a, b, SolverOptions(solver_tol=1e-10, tt_tol=1e-12, seed=seed))
    dense = np.linalg.solve(a.to_dense(), b.to_dense().ravel())
    assert st_.converged
    assert rel_err(x.to_dense().ravel(), dense) < 1e-8


def test_sum_of_kronecker_terms(rng):
    # a Laplacian-like operator of rank 2
    n = 6
    lap = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    eye = np.eye(n)
    a = tt_axpy(1.0, TTMatrix.from_factors([lap, eye, eye]),
                tt_axpy(1.0, TTMatrix.from_factors([eye, lap, eye]), TTMatrix.from_factors([eye, eye, lap])))
    b = TTVector.ones([n, n, n])
    x, st_ = als_solve(a, b, SolverOptions(solver_tol=1e-10, tt_tol=1e-12))
    dense = np.linalg.solve(a.to_dense(), np.ones(n**3))
    assert rel_err(x.to_dense().ravel(), dense) < 1e-8
    assert tt_residual_norm(a, x, b) <= 1e-9 * b.norm()


def test_zero_rhs_gives_zero():
    a = TTMatrix.identity([3, 4])
    x, st_ = als_solve(a, TTVector.zeros([3, 4]))
    assert x.norm() == 0.0
    assert st_.sweeps_used == 0


def test_residual_norm_matches_dense(rng):
    a = TTMatrix.from_factors([_spd(rng, 3), _spd(rng, 4)])
    x = TTVector([rng.standard_normal((1, 3, 2)), rng.standard_normal((2, 4, 1))])
    b = TTVector([rng.standard_normal((1, 3, 1)), rng.standard_normal((1, 4, 1))])
    dense = np.linalg.norm(a.to_dense() @ x.to_dense().ravel() - b.to_dense().ravel())
    assert tt_residual_norm(a, x, b) == pytest.approx(dense, rel=1e-10)


def test_shape_checks():
    with pytest.raises(ShapeMismatchError):
        als_solve(TTMatrix.identity([3, 4]), TTVector.ones([3, 5]))
    with pytest.raises(InputError):
        als_solve(np.eye(3), TTVector.ones([3]))
    with pytest.raises(InputError):
        SolverOptions(solver_tol=0)


def test_rank_cap_reports_non_convergence(rng):
    n = 8
    lap = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    eye = np.eye(n)
    a = tt_axpy(1.0, TTMatrix.from_factors([lap, eye, eye]), TTMatrix.from_factors([eye, lap, eye]))
    a = tt_axpy(1.0, TTMatrix.from_factors([eye, eye, lap]), a)
    b = TTVector([rng.standard_normal(s) for s in [(1, n, 4), (4, n, 4), (4, n, 1)]])
    x, st_ = als_solve(a, b, SolverOptions(solver_tol=1e-12, tt_tol=1e-14, rmax=1, max_sweeps=3))
    assert max(x.ranks) <= 1
    assert not st_.converged
    assert st_.warning


# --- Newton ---------------------------------------------------------------------

def _scalar_system(a_val, m_val, f_val):
    one = lambda v: TTMatrix.from_factors([np.array([[v]]), np.array([[1.0]])])
    load = TTVector([np.array([[[f_val]]]), np.array([[[1.0]]])])
    return SemilinearSystem(one(a_val), one(m_val), load)


def test_newton_on_scalar_surrogate():
    # a u - m (u - u^3) = f with a=2, m=1: u=1 is the root for f=2
    sysm = _scalar_system(2.0, 1.0, 2.0)
    u, st_ = newton_solve(sysm, None, SolverOptions(solver_tol=1e-12, tt_tol=1e-14))
    assert st_.converged
    assert u.to_dense().item() == pytest.approx(1.0, abs=1e-10)
    # quadratic convergence: few iterations from zero
    assert st_.newton_iterations <= 8


def test_newton_zero_load_stays_zero():
    sysm = _scalar_system(2.0, 1.0, 0.0)
    u, st_ = newton_solve(sysm)
    assert st_.newton_iterations == 0
    assert u.norm() == 0.0


def _semilinear_system(n, tt_tol=1e-12):
    p = semilinear()
    grid = Grid(n, p.grid_bounds(), True)
    s = build_tt_system(p, grid, RunOptions(tt_tol=tt_tol))
    return SemilinearSystem(s.operator, s.mass, s.rhs)


def test_jacobian_finite_difference_check():
    sysm = _semilinear_system(4)
    rng = np.random.default_rng(5)
    shape = sysm.A.col_sizes
    u = TTVector([rng.standard_normal((1 if k == 0 else 2, n, 1 if k == len(shape) - 1 else 2)) for k, n in enumerate(shape)])
    v = TTVector([rng.standard_normal((1, n, 1)) for n in shape])
    eps = 1e-6
    fd = (sysm.loss(tt_axpy(eps, v, u), 1e-14).to_dense() - sysm.loss(tt_axpy(-eps, v, u), 1e-14).to_dense()) / (2 * eps)
    jv = ttmat_apply(sysm.jacobian(u, 1e-14), v).to_dense()
    assert rel_err(fd, jv) <= 1e-5


def test_newton_matches_dense_newton():
    sysm = _semilinear_system(3)
    u, st_ = newton_solve(sysm, None, SolverOptions(solver_tol=1e-10, tt_tol=1e-12))
    a, m, f = sysm.A.to_dense(), sysm.M.to_dense(), sysm.load.to_dense().ravel()
    w = np.zeros_like(f)
    for _ in range(20):
        loss = a @ w - m @ (w - w**3) - f
        w -= np.linalg.solve(a - m + 3 * m @ np.diag(w * w), loss)
    assert st_.converged
    assert rel_err(u.to_dense().ravel(), w) < 1e-8


class _UphillSystem(SemilinearSystem):
    """Flipped Jacobian: every Newton step climbs the loss."""

    def jacobian(self, u, tt_tol):
        return -1.0 * super().jacobian(u, tt_tol)


def test_newton_divergence_raises():
    base = _scalar_system(2.0, 1.0, 2.0)
    sysm = _UphillSystem(base.A, base.M, base.load)
    with pytest.raises(SolverError) as exc:
        newton_solve(sysm, None, SolverOptions(solver_tol=1e-12, tt_tol=1e-14, max_newton=50))
    assert len(exc.value.history) >= 4
