"""Dense linear-algebra kernels used by the tensor-train routines."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .exceptions import CapacityError, InputError, SingularMatrixError

#: Largest dense Kronecker product (in entries) ``kron`` will materialize.
KRON_MAX_ENTRIES = 50_000_000


def as_matrix(a, name="a") -> np.ndarray:
    """Return ``a`` as a finite 2-D float array or raise :class:`InputError`."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD factors ``a ~= left @ diag(s) @ right``."""

    left: np.ndarray
    s: np.ndarray
    right: np.ndarray

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.s) @ self.right


def truncation_rank(s, tol: float, rmax: int | None = None) -> int:
    """Smallest ``r`` with ``sum(s[r:]**2) <= tol**2 * sum(s**2)``, capped at ``rmax``.

    ``s`` must be sorted nonincreasing. A zero spectrum gives rank 0.
    """
    s = np.asarray(s, dtype=float)
    total = float(np.dot(s, s))
    if s.size == 0 or total == 0.0:
        return 0
    # tails[r] = sum_{k>=r} s_k^2
    tails = np.concatenate([np.cumsum((s * s)[::-1])[::-1], [0.0]])
    r = int(np.argmax(tails <= (tol * tol) * total))
    if rmax is not None:
        r = min(r, int(rmax))
    return r


def _svd(a: np.ndarray):
    try:
        return scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but sturdier
        return scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd", check_finite=False)


def truncated_svd(a, tol: float = 0.0, rmax: int | None = None) -> SvdResult:
    """Truncated SVD with a relative Frobenius tail criterion.

    Keeps the smallest rank ``r <= rmax`` such that the discarded singular
    values satisfy ``||a - U S V||_F <= tol * ||a||_F``; when ``rmax`` is
    binding the best rank-``rmax`` approximation is returned instead.
    """
    a = as_matrix(a)
    if tol < 0:
        raise InputError("tol must be nonnegative")
    if rmax is not None and rmax < 1:
        raise InputError("rmax must be >= 1")
    if a.size == 0:
        m, n = a.shape
        return SvdResult(np.zeros((m, 0)), np.zeros(0), np.zeros((0, n)))
    u, s, vt = _svd(a)
    r = truncation_rank(s, tol, rmax)
    return SvdResult(u[:, :r], s[:r], vt[:r, :])


def qr_decompose(a) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR factorization ``a = q @ r`` with ``q`` orthonormal columns."""
    a = as_matrix(a)
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise InputError("qr_decompose needs a nonempty matrix")
    q, r = np.linalg.qr(a, mode="reduced")
    return q, r


def solve_dense(a, b) -> np.ndarray:
    """Solve the square system ``a x = b``.

    Raises :class:`SingularMatrixError` (with the LAPACK reciprocal condition
    estimate) when ``a`` is singular to working precision.
    """
    a = as_matrix(a)
    b = np.asarray(b, dtype=float)
    if a.shape[0] != a.shape[1]:
        raise InputError(f"solve_dense needs a square matrix, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise InputError("right-hand side length does not match the matrix")
    if not np.all(np.isfinite(b)):
        raise InputError("right-hand side has non-finite entries")
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            return scipy.linalg.solve(a, b, check_finite=False)
        except scipy.linalg.LinAlgWarning as exc:
            rcond = _rcond_from_warning(exc)
            raise SingularMatrixError(
                f"matrix is ill-conditioned (rcond={rcond:.3e})", rcond=rcond
            ) from exc
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(f"matrix is exactly singular: {exc}", rcond=0.0) from exc


def _rcond_from_warning(exc) -> float:
    text = str(exc)
    try:
        return float(text.split("rcond=")[1].split(")")[0].rstrip(":"))
    except (IndexError, ValueError):
        return float("nan")


class MaxvolResult(NamedTuple):
    rows: np.ndarray
    iterations: int
    converged: bool


def maxvol(a, tol: float = 0.05, max_iters: int = 100) -> MaxvolResult:
    """Select ``r`` rows of a tall ``n x r`` matrix spanning a dominant submatrix.

    Starts from the pivots of an LU factorization with partial pivoting and
    swaps rows until every entry of ``a @ inv(a[rows])`` is at most
    ``1 + tol`` in modulus.
    """
    a = as_matrix(a)
    n, r = a.shape
    if n < r:
        raise InputError(f"maxvol needs a tall matrix, got {a.shape}")
    if r == 0:
        return MaxvolResult(np.zeros(0, dtype=int), 0, True)

    lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e-14 * max(diag.max(), np.finfo(float).tiny):
        raise InputError("maxvol input is rank deficient")
    perm = np.arange(n)
    for i, p in enumerate(piv):
        perm[i], perm[p] = perm[p], perm[i]
    rows = perm[:r].copy()

    try:
        coef = scipy.linalg.solve(a[rows].T, a.T, check_finite=False).T
    except np.linalg.LinAlgError as exc:
        raise InputError("maxvol input is rank deficient") from exc

    for it in range(max_iters):
        i, j = np.unravel_index(np.argmax(np.abs(coef)), coef.shape)
        if abs(coef[i, j]) <= 1.0 + tol:
            return MaxvolResult(rows, it, True)
        # Sherman-Morrison update for swapping row i into slot j
        col = coef[:, j].copy()
        row = coef[i, :].copy()
        row[j] -= 1.0
        coef -= np.outer(col, row / coef[i, j])
        rows[j] = i
    i, j = np.unravel_index(np.argmax(np.abs(coef)), coef.shape)
    return MaxvolResult(rows, max_iters, bool(abs(coef[i, j]) <= 1.0 + tol))


def kron(a, b) -> np.ndarray:
    """Kronecker product; the first factor indexes the slow (block) position."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    size = a.shape[0] * b.shape[0] * a.shape[1] * b.shape[1]
    if size > KRON_MAX_ENTRIES:
        raise CapacityError(f"kron result would have {size} entries")
    return np.kron(a, b)
