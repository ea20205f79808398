"""Binary container for trains.

Layout (all little-endian)::

    magic   b"TTSM"
    u16     version (1)
    u8      kind: 0 vector, 1 matrix
    u8      quantized flag
    u32     d
    u64[d]  row (or mode) sizes
    u64[d]  column sizes (matrices only)
    u64[d+1] ranks
    [factorization header when quantized]
    u32     number of original modes
    per original mode: u32 count + u64[count] radices (twice for matrices: rows, cols)
    f8[...] cores, each in C order, in train order
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .exceptions import InputError
from .quantize import ModeFactorization
from .tt import TTMatrix, TTVector

MAGIC = b"TTSM"
VERSION = 1


def _pack_fact(f: ModeFactorization) -> bytes:
    return struct.pack("<I", len(f.radices)) + np.asarray(f.radices, dtype="<u8").tobytes()


def dumps(train, factorizations=None) -> bytes:
    matrix = isinstance(train, TTMatrix)
    if not matrix and not isinstance(train, TTVector):
        raise InputError("expected a TTVector or TTMatrix")
    parts = [MAGIC, struct.pack("<HBBI", VERSION, int(matrix), int(factorizations is not None), train.d)]
    if matrix:
        parts.append(np.asarray(train.row_sizes, dtype="<u8").tobytes())
        parts.append(np.asarray(train.col_sizes, dtype="<u8").tobytes())
    else:
        parts.append(np.asarray(train.mode_sizes, dtype="<u8").tobytes())
    parts.append(np.asarray(train.full_ranks, dtype="<u8").tobytes())
    if factorizations is not None:
        parts.append(struct.pack("<I", len(factorizations)))
        for f in factorizations:
            if matrix:
                parts.append(_pack_fact(f[0]) + _pack_fact(f[1]))
            else:
                parts.append(_pack_fact(f))
    for c in train.cores:
        parts.append(np.ascontiguousarray(c, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise InputError("container is truncated")
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, n: int, dtype: str) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(n * itemsize), dtype=dtype).copy()


def _read_fact(rd: _Reader) -> ModeFactorization:
    (cnt,) = rd.unpack("<I")
    radices = tuple(int(v) for v in rd.array(cnt, "<u8"))
    return ModeFactorization(int(np.prod(radices)), radices)


def loads(buf: bytes):
    """Inverse of :func:`dumps`; returns ``(train, factorizations or None)``."""
    rd = _Reader(buf)
    if rd.take(4) != MAGIC:
        raise InputError("not a train container (bad magic)")
    version, matrix, quantized, d = rd.unpack("<HBBI")
    if version != VERSION:
        raise InputError(f"unsupported container version {version}")
    rows = rd.array(d, "<u8").astype(int)
    cols = rd.array(d, "<u8").astype(int) if matrix else None
    ranks = rd.array(d + 1, "<u8").astype(int)
    facts = None
    if quantized:
        (nf,) = rd.unpack("<I")
        facts = [(_read_fact(rd), _read_fact(rd)) if matrix else _read_fact(rd) for _ in range(nf)]
    cores = []
    for k in range(d):
        shape = (ranks[k], rows[k], cols[k], ranks[k + 1]) if matrix else (ranks[k], rows[k], ranks[k + 1])
        cores.append(rd.array(int(np.prod(shape)), "<f8").reshape(shape))
    if rd.pos != len(buf):
        raise InputError("trailing bytes after the last core")
    train = TTMatrix(cores, copy=False) if matrix else TTVector(cores, copy=False)
    return train, facts


def save_train(path, train, factorizations=None) -> None:
    Path(path).write_bytes(dumps(train, factorizations))


def load_train(path):
    return loads(Path(path).read_bytes())
