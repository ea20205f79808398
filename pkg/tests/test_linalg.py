import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ttsem.exceptions import CapacityError, InputError, SingularMatrixError
from ttsem.linalg import kron, maxvol, qr_decompose, solve_dense, truncated_svd, truncation_rank


def test_truncation_rank_tail_rule():
    s = np.array([1.0, 0.1, 0.01, 0.001])
    # tail after rank 2 is sqrt(1e-4 + 1e-6) ~ 0.01005 relative to ~1.005
    assert truncation_rank(s, 0.02) == 2
    assert truncation_rank(s, 0.0) == 4
    assert truncation_rank(s, 1.0) == 0
    assert truncation_rank(np.zeros(3), 0.1) == 0
    assert truncation_rank(s, 0.0, rmax=3) == 3


def test_truncated_svd_identity_and_rank_one():
    res = truncated_svd(np.eye(3), tol=0.0)
    assert res.rank == 3
    np.testing.assert_allclose(res.reconstruct(), np.eye(3), atol=1e-15)
    u = np.arange(1.0, 5.0)
    v = np.array([2.0, -1.0, 0.5])
    res = truncated_svd(np.outer(u, v), tol=1e-12)
    assert res.rank == 1
    np.testing.assert_allclose(res.s[0], np.linalg.norm(u) * np.linalg.norm(v))


def test_truncated_svd_error_bound(rng):
    a = rng.standard_normal((30, 20)) @ np.diag(0.5 ** np.arange(20)) @ rng.standard_normal((20, 20))
    for tol in (1e-1, 1e-3, 1e-6):
        res = truncated_svd(a, tol)
        assert np.linalg.norm(a - res.reconstruct()) <= tol * np.linalg.norm(a) * (1 + 1e-12)


def test_truncated_svd_rejects_bad_input():
    with pytest.raises(InputError):
        truncated_svd(np.array([1.0, np.nan]).reshape(1, 2))
    with pytest.raises(InputError):
        truncated_svd(np.ones(3))
    with pytest.raises(InputError):
        truncated_svd(np.ones((2, 2)), tol=-1)


def test_qr_orthonormal(rng):
    a = rng.standard_normal((7, 3))
    q, r = qr_decompose(a)
    np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(q @ r, a, atol=1e-13)
    assert np.allclose(np.tril(r, -1), 0)


def test_solve_dense_and_singular():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    np.testing.assert_allclose(solve_dense(a, [3.0, 5.0]), [0.8, 1.4])
    with pytest.raises(SingularMatrixError):
        solve_dense(np.ones((2, 2)), [1.0, 1.0])
    with pytest.raises(InputError):
        solve_dense(np.ones((2, 3)), [1.0, 1.0])


def test_maxvol_picks_largest_in_column():
    assert list(maxvol(np.array([[1.0], [2.0], [3.0]])).rows) == [2]
    assert list(maxvol(np.array([[1.0], [-5.0], [3.0]])).rows) == [1]


@given(arrays(np.float64, (12, 3), elements=st.floats(-10, 10, allow_nan=False)))
def test_maxvol_dominance(a):
    a = a + 0.0
    if np.linalg.matrix_rank(a, tol=1e-6 * max(1.0, np.abs(a).max())) < 3:
        return
    try:
        res = maxvol(a, tol=0.05)
    except InputError:
        return
    coef = a @ np.linalg.inv(a[res.rows])
    assert len(set(res.rows.tolist())) == 3
    assert np.abs(coef).max() <= 1.05 + 1e-8


def test_maxvol_rejects_wide():
    with pytest.raises(InputError):
        maxvol(np.ones((2, 3)))


def test_kron_order_and_cap():
    a = np.array([[1.0, 2.0]])
    b = np.array([[0.0], [1.0]])
    np.testing.assert_array_equal(kron(a, b), [[0.0, 0.0], [1.0, 2.0]])
    with pytest.raises(CapacityError):
        kron(np.ones((8000, 1)), np.ones((8000, 1)))
