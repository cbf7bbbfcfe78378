"""Binary interchange format for TT vectors and matrices.

Layout (all little-endian):

    magic     4 bytes   b"TTV1" (vector) or b"TTM1" (matrix)
    d         uint64    number of cores
    rows      d x uint64 mode sizes (row sizes for a matrix)
    cols      d x uint64 column sizes (matrix only)
    ranks     (d + 1) x uint64
    cores     float64 data of each core in C order, core 0 first
"""

from __future__ import annotations

import numpy as np

from .core import TtMatrix, TtVector

_VEC = b"TTV1"
_MAT = b"TTM1"
_U64 = np.dtype("<u8")
_F64 = np.dtype("<f8")


def dump_tt(path, x: TtVector | TtMatrix) -> None:
    is_mat = isinstance(x, TtMatrix)
    with open(path, "wb") as fh:
        fh.write(_MAT if is_mat else _VEC)
        fh.write(np.array([x.d], dtype=_U64).tobytes())
        if is_mat:
            fh.write(np.array(x.row_shape, dtype=_U64).tobytes())
            fh.write(np.array(x.col_shape, dtype=_U64).tobytes())
        else:
            fh.write(np.array(x.shape, dtype=_U64).tobytes())
        fh.write(np.array(x.ranks, dtype=_U64).tobytes())
        for c in x.cores:
            fh.write(np.ascontiguousarray(c, dtype=_F64).tobytes())


def load_tt(path) -> TtVector | TtMatrix:
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:4]
    if magic not in (_VEC, _MAT):
        raise ValueError(f"{path}: not a TT dump (magic {magic!r})")
    pos = 4

    def take(n, dtype):
        nonlocal pos
        size = n * np.dtype(dtype).itemsize
        if pos + size > len(data):
            raise ValueError(f"{path}: truncated TT dump")
        out = np.frombuffer(data, dtype=dtype, count=n, offset=pos)
        pos += size
        return out

    d = int(take(1, _U64)[0])
    rows = [int(v) for v in take(d, _U64)]
    cols = [int(v) for v in take(d, _U64)] if magic == _MAT else None
    ranks = [int(v) for v in take(d + 1, _U64)]
    cores = []
    for k in range(d):
        shape = (ranks[k], rows[k]) + ((cols[k],) if cols else ()) + (ranks[k + 1],)
        cores.append(take(int(np.prod(shape)), _F64).reshape(shape).copy())
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes after the last core")
    return TtMatrix(cores) if cols else TtVector(cores)
