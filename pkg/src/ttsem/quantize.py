"""Quantized tensor trains: split every mode into a chain of small radices."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import InputError, ShapeMismatchError
from .linalg import truncation_rank, _svd
from .tt import TTMatrix, TTVector, tt_round

#: Relative cutoff used when splitting a core exactly.
_SPLIT_EPS = 1e-15


@dataclass(frozen=True)
class ModeFactorization:
    original_size: int
    radices: tuple[int, ...]

    def __post_init__(self):
        if int(np.prod(self.radices)) != self.original_size:
            raise InputError(f"radices {self.radices} do not multiply to {self.original_size}")


def factor_mode(n: int) -> ModeFactorization:
    """Prime factorization of ``n``, smallest factors first (so 2s lead)."""
    n = int(n)
    if n < 1:
        raise InputError("mode size must be >= 1")
    if n == 1:
        return ModeFactorization(1, (1,))
    radices = []
    m, p = n, 2
    while p * p <= m:
        while m % p == 0:
            radices.append(p)
            m //= p
        p += 1
    if m > 1:
        radices.append(m)
    return ModeFactorization(n, tuple(radices))


def _paired(rowf: ModeFactorization, colf: ModeFactorization) -> tuple[list[int], list[int]]:
    rows, cols = list(rowf.radices), list(colf.radices)
    L = max(len(rows), len(cols))
    return rows + [1] * (L - len(rows)), cols + [1] * (L - len(cols))


def quantization_plan(t) -> list:
    """Factorizations the quantizer will use: one per vector mode, a (row, col) pair per matrix mode."""
    if isinstance(t, TTMatrix):
        return [(factor_mode(m), factor_mode(n)) for m, n in zip(t.row_sizes, t.col_sizes)]
    if isinstance(t, TTVector):
        return [factor_mode(n) for n in t.mode_sizes]
    raise InputError("expected a TTVector or TTMatrix")


def _split_core(block: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    """Exactly split ``block`` of shape ``(r, *sizes, r')`` into a chain of 3-way cores."""
    r0 = block.shape[0]
    rest = block.reshape(r0, -1)
    out = []
    r = r0
    for k, n in enumerate(sizes[:-1]):
        mat = rest.reshape(r * n, -1)
        u, s, vt = _svd(mat)
        rank = max(1, truncation_rank(s, _SPLIT_EPS))
        if s[0] == 0.0:
            rank = 1
        out.append(u[:, :rank].reshape(r, n, rank))
        rest = s[:rank, None] * vt[:rank]
        r = rank
    out.append(rest.reshape(r, sizes[-1], -1))
    return out


def quantize(t, tol: float = 1e-14):
    """Replace every mode by its radix chain and round the result at ``tol``.

    Matrix modes are split jointly: each quantized core carries one row digit
    and one column digit (the shorter radix list is padded with 1s).
    """
    plan = quantization_plan(t)
    cores = []
    if isinstance(t, TTMatrix):
        for core, (rf, cf) in zip(t.cores, plan):
            rows, cols = _paired(rf, cf)
            L = len(rows)
            ra, _, _, rb = core.shape
            blk = core.reshape([ra] + rows + cols + [rb])
            perm = [0] + [p for l in range(L) for p in (1 + l, 1 + L + l)] + [2 * L + 1]
            blk = blk.transpose(perm)
            sizes = [rows[l] * cols[l] for l in range(L)]
            for c, m, n in zip(_split_core(blk.reshape([ra] + sizes + [rb]), sizes), rows, cols):
                cores.append(c.reshape(c.shape[0], m, n, c.shape[2]))
        q = TTMatrix(cores, copy=False)
    else:
        for core, f in zip(t.cores, plan):
            ra, _, rb = core.shape
            sizes = list(f.radices)
            cores.extend(_split_core(core.reshape([ra] + sizes + [rb]), sizes))
        q = TTVector(cores, copy=False)
    return tt_round(q, tol) if tol > 0 else q


def dequantize(q, factorizations: Sequence):
    """Merge consecutive radix cores back into the original modes."""
    cores = list(q.cores)
    out = []
    pos = 0
    matrix = isinstance(q, TTMatrix)
    for f in factorizations:
        if matrix:
            if not (isinstance(f, tuple) and len(f) == 2):
                raise InputError("matrix dequantization needs (row, col) factorization pairs")
            rows, cols = _paired(*f)
            L = len(rows)
        else:
            L = len(f.radices)
        chunk = cores[pos: pos + L]
        if len(chunk) != L:
            raise ShapeMismatchError("factorizations describe more cores than the train has")
        if matrix:
            for c, m, n in zip(chunk, rows, cols):
                if c.shape[1:3] != (m, n):
                    raise ShapeMismatchError(f"core digit sizes {c.shape[1:3]} do not match radices ({m}, {n})")
            acc = chunk[0]
            for c in chunk[1:]:
                # acc: (ra, M, N, r) x c: (r, m, n, rb) -> (ra, M*m, N*n, rb)
                ra, M, N, _ = acc.shape
                _, m, n, rb = c.shape
                acc = np.einsum("aMNr,rmnb->aMmNnb", acc, c).reshape(ra, M * m, N * n, rb)
            out.append(acc)
        else:
            for c, n in zip(chunk, f.radices):
                if c.shape[1] != n:
                    raise ShapeMismatchError(f"core size {c.shape[1]} does not match radix {n}")
            acc = chunk[0]
            for c in chunk[1:]:
                ra, M, _ = acc.shape
                acc = np.einsum("aMr,rmb->aMmb", acc, c).reshape(ra, M * c.shape[1], c.shape[2])
            out.append(acc)
        pos += L
    if pos != len(cores):
        raise ShapeMismatchError("train has more cores than the factorizations describe")
    return TTMatrix(out, copy=False) if matrix else TTVector(out, copy=False)


def compression_ratio(t) -> float:
    """Dense entry count divided by stored core entries."""
    if isinstance(t, TTMatrix):
        full = float(np.prod(np.asarray(t.row_sizes, dtype=float))) * float(np.prod(np.asarray(t.col_sizes, dtype=float)))
    else:
        full = float(np.prod(np.asarray(t.mode_sizes, dtype=float)))
    return full / t.storage
