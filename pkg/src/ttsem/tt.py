"""Tensor-train vectors and matrices.

A :class:`TTVector` stores a ``d``-way array as cores of shape
``(r_{k-1}, n_k, r_k)`` and a :class:`TTMatrix` stores an operator as cores
of shape ``(r_{k-1}, m_k, n_k, r_k)``.  Multi-indices are flattened with the
last mode fastest, so the dense matrix of a rank-1 operator is the Kronecker
product of its factors in train order.

Trains are treated as immutable values: every operation returns a new train.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .exceptions import CapacityError, InputError, ShapeMismatchError
from .linalg import qr_decompose, truncated_svd, truncation_rank

#: Default cap on the number of entries ``to_dense`` will materialize.
DENSE_MAX_ENTRIES = 20_000_000


class _Train:
    """Behaviour shared by vectors and matrices.

    Subclasses store their cores in ``self._cores`` and describe how a core
    is viewed as a 3-way array (rank, flattened mode, rank).
    """

    _core_ndim = 3

    def __init__(self, cores: Sequence[np.ndarray], copy: bool = True):
        if len(cores) == 0:
            raise InputError("a train needs at least one core")
        cores = [np.array(c, dtype=float, copy=copy) for c in cores]
        for k, c in enumerate(cores):
            if c.ndim != self._core_ndim:
                raise InputError(f"core {k} must be {self._core_ndim}-D, got shape {c.shape}")
            if any(s < 1 for s in c.shape[1:-1]):
                raise InputError(f"core {k} has an empty mode")
        if cores[0].shape[0] != 1 or cores[-1].shape[-1] != 1:
            raise InputError("boundary ranks must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[-1] != cores[k + 1].shape[0]:
                raise InputError(
                    f"rank mismatch between cores {k} and {k + 1}: "
                    f"{cores[k].shape[-1]} != {cores[k + 1].shape[0]}"
                )
        for c in cores:
            c.flags.writeable = False
        self._cores = tuple(cores)

    # --- basic properties -------------------------------------------------
    @property
    def cores(self) -> tuple[np.ndarray, ...]:
        return self._cores

    @property
    def d(self) -> int:
        return len(self._cores)

    @property
    def ranks(self) -> list[int]:
        """Internal ranks ``r_1 .. r_{d-1}``."""
        return [c.shape[-1] for c in self._cores[:-1]]

    @property
    def full_ranks(self) -> list[int]:
        return [1] + self.ranks + [1]

    @property
    def storage(self) -> int:
        """Number of stored core entries."""
        return int(sum(c.size for c in self._cores))

    def _flat(self) -> list[np.ndarray]:
        return [c.reshape(c.shape[0], -1, c.shape[-1]) for c in self._cores]

    def _unflat(self, cores: Sequence[np.ndarray]):
        raise NotImplementedError

    def _same_layout(self, other) -> None:
        if type(self) is not type(other):
            raise ShapeMismatchError(f"cannot combine {type(self).__name__} with {type(other).__name__}")
        if self._layout() != other._layout():
            raise ShapeMismatchError(f"mode sizes differ: {self._layout()} vs {other._layout()}")

    def _layout(self):
        raise NotImplementedError

    # --- arithmetic sugar ---------------------------------------------------
    def __add__(self, other):
        return tt_axpy(1.0, other, self)

    def __sub__(self, other):
        return tt_axpy(-1.0, other, self)

    def __neg__(self):
        return self.scale(-1.0)

    def __mul__(self, alpha):
        if np.isscalar(alpha):
            return self.scale(float(alpha))
        return NotImplemented

    __rmul__ = __mul__

    def scale(self, alpha: float):
        cores = list(self._cores)
        cores[-1] = cores[-1] * alpha
        return type(self)(cores)

    def norm(self) -> float:
        return tt_norm(self)

    def round(self, tol: float, rmax: int | None = None):
        return tt_round(self, tol, rmax)

    def __repr__(self):
        return f"{type(self).__name__}(layout={self._layout()}, ranks={self.ranks})"


class TTVector(_Train):
    """Tensor train of 3-way cores ``(r_{k-1}, n_k, r_k)``."""

    _core_ndim = 3

    @property
    def mode_sizes(self) -> list[int]:
        return [c.shape[1] for c in self._cores]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.mode_sizes)

    @property
    def size(self) -> int:
        return int(np.prod(self.mode_sizes, dtype=np.int64))

    def _layout(self):
        return tuple(self.mode_sizes)

    def _unflat(self, cores):
        return TTVector(cores, copy=False)

    def to_dense(self, max_entries: int = DENSE_MAX_ENTRIES) -> np.ndarray:
        return tt_to_dense(self, max_entries)

    def dot(self, other: "TTVector") -> float:
        return tt_dot(self, other)

    @classmethod
    def from_dense(cls, x, tol: float = 1e-14, rmax: int | None = None) -> "TTVector":
        return tt_from_dense(x, tol, rmax)

    @classmethod
    def rank1(cls, factors: Sequence[np.ndarray]) -> "TTVector":
        """Rank-1 train ``f_1 o f_2 o ... o f_d`` from 1-D factors."""
        return cls([np.asarray(f, dtype=float).reshape(1, -1, 1) for f in factors])

    @classmethod
    def ones(cls, shape: Sequence[int]) -> "TTVector":
        return cls.rank1([np.ones(n) for n in shape])

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "TTVector":
        return cls.rank1([np.zeros(n) for n in shape])


class TTMatrix(_Train):
    """Tensor train of 4-way cores ``(r_{k-1}, m_k, n_k, r_k)``.

    ``m_k`` indexes the output (row) and ``n_k`` the input (column) of the
    operator in mode ``k``.
    """

    _core_ndim = 4

    @property
    def row_sizes(self) -> list[int]:
        return [c.shape[1] for c in self._cores]

    @property
    def col_sizes(self) -> list[int]:
        return [c.shape[2] for c in self._cores]

    @property
    def shape(self) -> tuple[int, int]:
        return (
            int(np.prod(self.row_sizes, dtype=np.int64)),
            int(np.prod(self.col_sizes, dtype=np.int64)),
        )

    def _layout(self):
        return (tuple(self.row_sizes), tuple(self.col_sizes))

    def _unflat(self, cores):
        return TTMatrix(
            [c.reshape(c.shape[0], m, n, c.shape[-1]) for c, m, n in zip(cores, self.row_sizes, self.col_sizes)],
            copy=False,
        )

    def to_dense(self, max_entries: int = DENSE_MAX_ENTRIES) -> np.ndarray:
        """Dense ``(prod m_k) x (prod n_k)`` matrix."""
        m, n = self.shape
        if m * n > max_entries:
            raise CapacityError(f"dense operator would have {m * n} entries (cap {max_entries})")
        res = np.ones((1, 1, 1))
        for c in self._cores:
            # res: (M, N, r); core: (r, m, n, r')
            res = np.einsum("MNr,rmns->MmNns", res, c)
            M, m_, N, n_, s = res.shape
            res = res.reshape(M * m_, N * n_, s)
        return res[:, :, 0]

    def __matmul__(self, other):
        if isinstance(other, TTVector):
            return ttmat_apply(self, other)
        if isinstance(other, TTMatrix):
            return ttmat_matmul(self, other)
        return NotImplemented

    def transpose(self) -> "TTMatrix":
        return TTMatrix([c.transpose(0, 2, 1, 3) for c in self._cores])

    @property
    def T(self) -> "TTMatrix":
        return self.transpose()

    @classmethod
    def from_factors(cls, factors: Sequence[np.ndarray]) -> "TTMatrix":
        return ttmat_from_factors(factors)

    @classmethod
    def identity(cls, sizes: Sequence[int]) -> "TTMatrix":
        return ttmat_from_factors([np.eye(n) for n in sizes])

    @classmethod
    def from_dense(cls, a, row_sizes: Sequence[int], col_sizes: Sequence[int],
                   tol: float = 1e-14, rmax: int | None = None) -> "TTMatrix":
        """TT-matrix from a dense matrix via TT-SVD of the index-paired tensor."""
        a = np.asarray(a, dtype=float)
        d = len(row_sizes)
        if len(col_sizes) != d:
            raise InputError("row_sizes and col_sizes must have the same length")
        t = a.reshape(tuple(row_sizes) + tuple(col_sizes))
        perm = [ax for k in range(d) for ax in (k, d + k)]
        t = t.transpose(perm).reshape([m * n for m, n in zip(row_sizes, col_sizes)])
        vec = tt_from_dense(t, tol, rmax)
        return TTMatrix(
            [c.reshape(c.shape[0], m, n, c.shape[-1]) for c, m, n in zip(vec.cores, row_sizes, col_sizes)],
            copy=False,
        )


def _rebuild_like(template: _Train, flat_cores) -> _Train:
    return template._unflat(flat_cores)


# --- dense conversion ---------------------------------------------------------

def tt_to_dense(x: TTVector, max_entries: int = DENSE_MAX_ENTRIES) -> np.ndarray:
    """Contract all cores into the full array."""
    if x.size > max_entries:
        raise CapacityError(f"dense tensor would have {x.size} entries (cap {max_entries})")
    res = np.ones((1, 1))
    for c in x.cores:
        res = (res @ c.reshape(c.shape[0], -1)).reshape(-1, c.shape[-1])
    return res.reshape(x.shape)


def tt_from_dense(x, tol: float = 1e-14, rmax: int | None = None) -> TTVector:
    """TT-SVD of a dense array.

    The per-unfolding threshold is ``tol / sqrt(d - 1)`` so that the total
    relative Frobenius error stays below ``tol``.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InputError("tensor has non-finite entries")
    shape = x.shape if x.ndim > 0 else (1,)
    d = len(shape)
    if d == 1:
        return TTVector([x.reshape(1, -1, 1)])
    local_tol = tol / np.sqrt(d - 1)
    cores = []
    r = 1
    rest = x.reshape(shape)
    for k in range(d - 1):
        mat = rest.reshape(r * shape[k], -1)
        svd = truncated_svd(mat, local_tol, rmax)
        rk = max(svd.rank, 1)
        if svd.rank == 0:
            u = np.zeros((mat.shape[0], 1))
            u[0, 0] = 1.0
            rest = np.zeros((1, mat.shape[1]))
        else:
            u = svd.left
            rest = svd.s[:, None] * svd.right
        cores.append(u.reshape(r, shape[k], rk))
        r = rk
    cores.append(rest.reshape(r, shape[-1], 1))
    return TTVector(cores, copy=False)


# --- orthogonalization and rounding ------------------------------------------

def _orthogonalize_right(cores: list[np.ndarray]) -> list[np.ndarray]:
    """Right-orthogonalize cores 1..d-1 in place (flattened 3-way view)."""
    for k in range(len(cores) - 1, 0, -1):
        c = cores[k]
        r0, n, r1 = c.shape
        q, r = qr_decompose(c.reshape(r0, n * r1).T)
        cores[k] = q.T.reshape(-1, n, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], r.T, axes=(2, 0))
    return cores


def _orthogonalize_left(cores: list[np.ndarray]) -> list[np.ndarray]:
    for k in range(len(cores) - 1):
        c = cores[k]
        r0, n, r1 = c.shape
        q, r = qr_decompose(c.reshape(r0 * n, r1))
        cores[k] = q.reshape(r0, n, -1)
        cores[k + 1] = np.tensordot(r, cores[k + 1], axes=(1, 0))
    return cores


def tt_round(x, tol: float, rmax: int | None = None):
    """Recompress a train to the smallest ranks within relative error ``tol``.

    Right-to-left QR orthogonalization followed by a left-to-right sweep of
    truncated SVDs, each at ``tol / sqrt(d - 1)`` of the exact train norm.
    """
    if tol < 0:
        raise InputError("tol must be nonnegative")
    cores = _orthogonalize_right(x._flat())
    d = len(cores)
    nrm = float(np.linalg.norm(cores[0]))
    if nrm == 0.0:
        return _zero_like(x)
    if d == 1:
        return _rebuild_like(x, cores)
    local_tol = tol / np.sqrt(d - 1)
    for k in range(d - 1):
        c = cores[k]
        r0, n, r1 = c.shape
        mat = c.reshape(r0 * n, r1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        # after orthogonalization the unfolding norm equals the train norm
        r = max(truncation_rank(s, local_tol, rmax), 1)
        cores[k] = u[:, :r].reshape(r0, n, r)
        cores[k + 1] = np.tensordot(s[:r, None] * vt[:r], cores[k + 1], axes=(1, 0))
    return _rebuild_like(x, cores)


def _zero_like(x):
    flat = [np.zeros((1, c.shape[1], 1)) for c in x._flat()]
    return _rebuild_like(x, flat)


# --- linear algebra on trains -------------------------------------------------

def tt_axpy(alpha: float, x, y):
    """Return ``alpha * x + y`` with block-diagonal core concatenation.

    No rounding is performed; ranks add.
    """
    x._same_layout(y)
    xc, yc = x._flat(), y._flat()
    d = len(xc)
    xc[-1] = xc[-1] * alpha
    if d == 1:
        return _rebuild_like(x, [xc[0] + yc[0]])
    cores = []
    for k in range(d):
        a, b = xc[k], yc[k]
        n = a.shape[1]
        if k == 0:
            c = np.concatenate([a, b], axis=2)
        elif k == d - 1:
            c = np.concatenate([a, b], axis=0)
        else:
            c = np.zeros((a.shape[0] + b.shape[0], n, a.shape[2] + b.shape[2]))
            c[: a.shape[0], :, : a.shape[2]] = a
            c[a.shape[0]:, :, a.shape[2]:] = b
        cores.append(c)
    return _rebuild_like(x, cores)


def tt_sum(trains: Sequence, weights: Sequence[float] | None = None):
    """Weighted sum of several trains without intermediate rounding."""
    if not trains:
        raise InputError("tt_sum needs at least one train")
    weights = [1.0] * len(trains) if weights is None else list(weights)
    acc = trains[0].scale(weights[0])
    for w, t in zip(weights[1:], trains[1:]):
        acc = tt_axpy(w, t, acc)
    return acc


def tt_hadamard(x: TTVector, y: TTVector) -> TTVector:
    """Elementwise product; ranks multiply."""
    x._same_layout(y)
    cores = []
    for a, b in zip(x.cores, y.cores):
        c = np.einsum("anb,cnd->acnbd", a, b)
        cores.append(c.reshape(a.shape[0] * b.shape[0], a.shape[1], a.shape[2] * b.shape[2]))
    return TTVector(cores, copy=False)


def tt_dot(x, y) -> float:
    """Sum over all multi-indices of ``x * y``."""
    x._same_layout(y)
    acc = np.ones((1, 1))
    for a, b in zip(x._flat(), y._flat()):
        # acc: (ra, rb)
        t = np.tensordot(acc, a, axes=(0, 0))  # (rb, n, ra')
        acc = np.tensordot(t, b, axes=([0, 1], [0, 1]))  # (ra', rb')
    return float(acc[0, 0])


def tt_norm(x) -> float:
    """Frobenius norm, computed stably via orthogonalization."""
    cores = _orthogonalize_left(x._flat())
    return float(np.linalg.norm(cores[-1]))


def tt_diag(x: TTVector) -> TTMatrix:
    """Operator acting as elementwise multiplication by ``x``."""
    cores = []
    for c in x.cores:
        r0, n, r1 = c.shape
        dc = np.zeros((r0, n, n, r1))
        idx = np.arange(n)
        dc[:, idx, idx, :] = c
        cores.append(dc)
    return TTMatrix(cores, copy=False)


def ttmat_from_factors(factors: Sequence[np.ndarray]) -> TTMatrix:
    """Rank-1 operator ``A_1 o A_2 o ... o A_d`` (dense form ``kron(A_1, ..., A_d)``)."""
    if len(factors) == 0:
        raise InputError("need at least one factor")
    cores = []
    for f in factors:
        f = np.asarray(f, dtype=float)
        if f.ndim != 2:
            raise InputError("factors must be 2-D matrices")
        if not np.all(np.isfinite(f)):
            raise InputError("factor has non-finite entries")
        cores.append(f[None, :, :, None])
    return TTMatrix(cores, copy=False)


def ttmat_apply(a: TTMatrix, x: TTVector) -> TTVector:
    """Matrix-vector product; result ranks are products of operand ranks."""
    if list(a.col_sizes) != list(x.mode_sizes):
        raise ShapeMismatchError(f"operator columns {a.col_sizes} do not match vector modes {x.mode_sizes}")
    cores = []
    for g, c in zip(a.cores, x.cores):
        y = np.einsum("AmnB,anb->AamBb", g, c)
        A, ra, m, B, rb = y.shape
        cores.append(y.reshape(A * ra, m, B * rb))
    return TTVector(cores, copy=False)


def ttmat_matmul(a: TTMatrix, b: TTMatrix) -> TTMatrix:
    """Operator product ``a @ b``."""
    if list(a.col_sizes) != list(b.row_sizes):
        raise ShapeMismatchError(f"cannot multiply operators: {a.col_sizes} vs {b.row_sizes}")
    cores = []
    for g, h in zip(a.cores, b.cores):
        y = np.einsum("AmkB,akns->AamnBs", g, h)
        A, ra, m, n, B, rb = y.shape
        cores.append(y.reshape(A * ra, m, n, B * rb))
    return TTMatrix(cores, copy=False)


def _as_index(r, size: int) -> np.ndarray:
    if isinstance(r, slice):
        idx = np.arange(size)[r]
    else:
        idx = np.asarray(r, dtype=int).ravel()
    if idx.size == 0:
        raise InputError("empty index range")
    if idx.min() < 0 or idx.max() >= size:
        raise InputError(f"index range out of bounds for mode of size {size}")
    return idx


def restrict_modes(t, ranges, col_ranges=None):
    """Slice each mode of a train.

    For a :class:`TTVector` ``ranges`` holds one slice or index array per
    mode.  For a :class:`TTMatrix` ``ranges`` restricts the rows and
    ``col_ranges`` the columns; ``None`` keeps a mode whole.
    """
    if len(ranges) != t.d:
        raise InputError(f"need {t.d} ranges, got {len(ranges)}")
    if isinstance(t, TTVector):
        cores = []
        for c, r in zip(t.cores, ranges):
            idx = np.arange(c.shape[1]) if r is None else _as_index(r, c.shape[1])
            cores.append(c[:, idx, :])
        return TTVector(cores)
    if col_ranges is None:
        col_ranges = [None] * t.d
    if len(col_ranges) != t.d:
        raise InputError(f"need {t.d} column ranges, got {len(col_ranges)}")
    cores = []
    for c, r, s in zip(t.cores, ranges, col_ranges):
        ri = np.arange(c.shape[1]) if r is None else _as_index(r, c.shape[1])
        ci = np.arange(c.shape[2]) if s is None else _as_index(s, c.shape[2])
        cores.append(c[:, ri][:, :, ci])
    return TTMatrix(cores)
