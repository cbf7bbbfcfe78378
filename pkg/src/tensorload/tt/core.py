"""
Tensor-train vectors and matrices.

A TT vector of order d stores cores ``G_k`` of shape ``(r_{k-1}, n_k, r_k)``
with ``r_0 = r_d = 1``; entry ``(i_1, ..., i_d)`` is the matrix product
``G_1[:, i_1, :] @ ... @ G_d[:, i_d, :]``. A TT matrix stores cores of shape
``(r_{k-1}, n_k, m_k, r_k)`` (row mode, column mode).

Both classes are immutable values: every operation returns a new object and
never mutates cores in place.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

MAX_DENSE = 10**7


class ShapeMismatchError(ValueError):
    pass


class DenseSizeError(MemoryError):
    pass


def _guard(size: int) -> None:
    if size > MAX_DENSE:
        raise DenseSizeError(f"dense size {size} exceeds the {MAX_DENSE} entry guard")


def _chop(s: np.ndarray, delta: float) -> int:
    """Smallest rank r with ||s[r:]||_2 <= delta (at least 1)."""
    if s.size == 0:
        return 1
    tail = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]  # tail[r] = ||s[r:]||
    keep = np.nonzero(tail > delta)[0]
    return max(1, int(keep[-1]) + 1 if keep.size else 1)


class TtVector:
    __slots__ = ("cores",)

    def __init__(self, cores: Sequence[np.ndarray]):
        cores = [np.asarray(c, dtype=float) for c in cores]
        if not cores:
            raise ValueError("a TT vector needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise ValueError(f"core {k} must be 3-way, got shape {c.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[2] != cores[k + 1].shape[0]:
                raise ValueError(f"rank mismatch between cores {k} and {k + 1}")
        self.cores = tuple(cores)

    # -- structure --------------------------------------------------------
    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    @property
    def storage(self) -> int:
        return sum(c.size for c in self.cores)

    def __repr__(self):
        return f"TtVector(shape={self.shape}, ranks={self.ranks})"

    # -- constructors -----------------------------------------------------
    @classmethod
    def rank1(cls, factors: Sequence[np.ndarray]) -> "TtVector":
        return cls([np.asarray(f, dtype=float).reshape(1, -1, 1) for f in factors])

    @classmethod
    def ones(cls, shape: Sequence[int]) -> "TtVector":
        return cls.rank1([np.ones(n) for n in shape])

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "TtVector":
        return cls.rank1([np.zeros(n) for n in shape])

    @classmethod
    def random(cls, shape: Sequence[int], ranks, rng=None) -> "TtVector":
        rng = np.random.default_rng(rng)
        d = len(shape)
        if np.isscalar(ranks):
            ranks = [1] + [int(ranks)] * (d - 1) + [1]
        return cls([rng.standard_normal((ranks[k], shape[k], ranks[k + 1])) for k in range(d)])

    # -- arithmetic -------------------------------------------------------
    def _check(self, other: "TtVector") -> None:
        if self.shape != other.shape:
            raise ShapeMismatchError(f"mode sizes differ: {self.shape} vs {other.shape}")

    def __add__(self, other):
        return tt_add(self, other)

    def __sub__(self, other):
        return tt_add(self, tt_scale(other, -1.0))

    def __mul__(self, c):
        return tt_scale(self, c)

    __rmul__ = __mul__

    def __neg__(self):
        return tt_scale(self, -1.0)

    def full(self) -> np.ndarray:
        return tt_to_dense(self)

    def norm(self) -> float:
        return tt_norm(self)

    def round(self, tol: float, max_rank: int | None = None) -> "TtVector":
        return tt_round(self, tol, max_rank)

    def entries(self, idx: np.ndarray) -> np.ndarray:
        """Values at a batch of multi-indices ``idx`` of shape (N, d)."""
        idx = np.asarray(idx, dtype=int)
        v = self.cores[0][0, idx[:, 0], :]
        for k in range(1, self.d):
            v = np.einsum("nr,rns->ns", v, self.cores[k][:, idx[:, k], :])
        return v[:, 0]

    def contract(self, weights: Sequence[np.ndarray | None]) -> "TtVector | float":
        """Contract every dimension whose weight vector is given.

        Dimensions with ``None`` stay free; the result is a TT over the free
        dimensions in their original order, or a scalar when none remain.
        """
        if len(weights) != self.d:
            raise ShapeMismatchError("one weight entry per dimension expected")
        out_cores = []
        carry = np.ones((1, 1))
        for c, w in zip(self.cores, weights):
            if w is None:
                out_cores.append(np.einsum("ab,bnc->anc", carry, c))
                carry = np.eye(c.shape[2])
            else:
                carry = carry @ np.einsum("anb,n->ab", c, np.asarray(w, dtype=float))
        if not out_cores:
            return float(carry[0, 0])
        out_cores[-1] = np.einsum("anb,bc->anc", out_cores[-1], carry)
        return TtVector(out_cores)


# -- conversions --------------------------------------------------------------


def tt_from_dense(a: np.ndarray, tol: float = 1e-14, max_rank: int | None = None) -> TtVector:
    """TT-SVD with relative Frobenius accuracy ``tol``."""
    a = np.asarray(a, dtype=float)
    _guard(a.size)
    shape = a.shape
    d = len(shape)
    if d == 1:
        return TtVector([a.reshape(1, -1, 1)])
    nrm = np.linalg.norm(a)
    if nrm == 0:
        return TtVector.zeros(shape)
    delta = tol * nrm / math.sqrt(d - 1)
    cores = []
    r = 1
    c = a.reshape(r * shape[0], -1)
    for k in range(d - 1):
        c = c.reshape(r * shape[k], -1)
        u, s, vt = np.linalg.svd(c, full_matrices=False)
        rk = _chop(s, delta)
        if max_rank is not None:
            rk = min(rk, max_rank)
        cores.append(u[:, :rk].reshape(r, shape[k], rk))
        c = s[:rk, None] * vt[:rk]
        r = rk
    cores.append(c.reshape(r, shape[-1], 1))
    return TtVector(cores)


def tt_to_dense(x: TtVector) -> np.ndarray:
    _guard(math.prod(x.shape))
    v = x.cores[0].reshape(-1, x.cores[0].shape[2])
    for c in x.cores[1:]:
        v = (v @ c.reshape(c.shape[0], -1)).reshape(-1, c.shape[2])
    return v.reshape(x.shape)


# -- orthogonalization and rounding --------------------------------------------


def _orthogonalize_right(cores: list) -> list:
    """Right-to-left QR sweep; cores[1:] become right-orthonormal."""
    cores = list(cores)
    for k in range(len(cores) - 1, 0, -1):
        r0, n, r1 = cores[k].shape
        q, rr = np.linalg.qr(cores[k].reshape(r0, n * r1).T)
        cores[k] = q.T.reshape(-1, n, r1)
        cores[k - 1] = np.einsum("anb,cb->anc", cores[k - 1], rr)
    return cores


def _orthogonalize_left(cores: list) -> list:
    cores = list(cores)
    for k in range(len(cores) - 1):
        r0, n, r1 = cores[k].shape
        q, rr = np.linalg.qr(cores[k].reshape(r0 * n, r1))
        cores[k] = q.reshape(r0, n, -1)
        cores[k + 1] = np.einsum("ab,bnc->anc", rr, cores[k + 1])
    return cores


def tt_round(x: TtVector, tol: float, max_rank: int | None = None) -> TtVector:
    """Recompress to relative Frobenius accuracy ``tol``.

    Right-to-left orthogonalization followed by a left-to-right truncated
    SVD sweep; the error budget is split evenly over the d-1 bonds.
    """
    d = x.d
    if d == 1:
        return x
    cores = _orthogonalize_right(list(x.cores))
    nrm = np.linalg.norm(cores[0])
    if nrm == 0:
        return TtVector.zeros(x.shape)
    delta = tol * nrm / math.sqrt(d - 1)
    for k in range(d - 1):
        r0, n, r1 = cores[k].shape
        u, s, vt = np.linalg.svd(cores[k].reshape(r0 * n, r1), full_matrices=False)
        rk = _chop(s, delta)
        if max_rank is not None:
            rk = min(rk, max_rank)
        cores[k] = u[:, :rk].reshape(r0, n, rk)
        cores[k + 1] = np.einsum("ab,bnc->anc", s[:rk, None] * vt[:rk], cores[k + 1])
    return TtVector(cores)


# -- algebra ------------------------------------------------------------------


def tt_add(a: TtVector, b: TtVector) -> TtVector:
    a._check(b)
    d = a.d
    if d == 1:
        return TtVector([a.cores[0] + b.cores[0]])
    cores = []
    for k, (x, y) in enumerate(zip(a.cores, b.cores)):
        if k == 0:
            cores.append(np.concatenate([x, y], axis=2))
        elif k == d - 1:
            cores.append(np.concatenate([x, y], axis=0))
        else:
            ra0, n, ra1 = x.shape
            rb0, _, rb1 = y.shape
            c = np.zeros((ra0 + rb0, n, ra1 + rb1))
            c[:ra0, :, :ra1] = x
            c[ra0:, :, ra1:] = y
            cores.append(c)
    return TtVector(cores)


def tt_scale(a: TtVector, c: float) -> TtVector:
    cores = list(a.cores)
    cores[0] = cores[0] * float(c)
    return TtVector(cores)


def tt_hadamard(a: TtVector, b: TtVector) -> TtVector:
    a._check(b)
    cores = []
    for x, y in zip(a.cores, b.cores):
        c = np.einsum("anb,cnd->acnbd", x, y)
        cores.append(c.reshape(x.shape[0] * y.shape[0], x.shape[1], x.shape[2] * y.shape[2]))
    return TtVector(cores)


def tt_dot(a: TtVector, b: TtVector) -> float:
    a._check(b)
    v = np.ones((1, 1))
    for x, y in zip(a.cores, b.cores):
        v = np.einsum("ac,anb,cnd->bd", v, x, y, optimize=True)
    return float(v[0, 0])


def tt_norm(a: TtVector) -> float:
    # Orthogonalize instead of sqrt(dot): no cancellation for tiny norms.
    cores = _orthogonalize_left(list(a.cores))
    return float(np.linalg.norm(cores[-1]))


def tt_sum(xs: Sequence[TtVector], tol: float | None = None, max_rank: int | None = None) -> TtVector:
    """Sum of several TT vectors, rounding after each addition when ``tol`` is set."""
    out = xs[0]
    for x in xs[1:]:
        out = tt_add(out, x)
        if tol is not None:
            out = tt_round(out, tol, max_rank)
    return out


# -- matrices -------------------------------------------------------------------


class TtMatrix:
    __slots__ = ("cores",)

    def __init__(self, cores: Sequence[np.ndarray]):
        cores = [np.asarray(c, dtype=float) for c in cores]
        for k, c in enumerate(cores):
            if c.ndim != 4:
                raise ValueError(f"matrix core {k} must be 4-way, got shape {c.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[3] != 1:
            raise ValueError("boundary ranks must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[3] != cores[k + 1].shape[0]:
                raise ValueError(f"rank mismatch between cores {k} and {k + 1}")
        self.cores = tuple(cores)

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def row_shape(self):
        return tuple(c.shape[1] for c in self.cores)

    @property
    def col_shape(self):
        return tuple(c.shape[2] for c in self.cores)

    @property
    def ranks(self):
        return (1,) + tuple(c.shape[3] for c in self.cores)

    def __repr__(self):
        return f"TtMatrix(rows={self.row_shape}, cols={self.col_shape}, ranks={self.ranks})"

    @classmethod
    def kron(cls, factors: Sequence[np.ndarray]) -> "TtMatrix":
        """Rank-1 TT matrix ``factors[0] (x) ... (x) factors[-1]``."""
        return cls([np.asarray(f, dtype=float)[None, :, :, None] for f in factors])

    @classmethod
    def identity(cls, shape: Sequence[int]) -> "TtMatrix":
        return cls.kron([np.eye(n) for n in shape])

    @classmethod
    def diag(cls, v: TtVector) -> "TtMatrix":
        cores = []
        for c in v.cores:
            r0, n, r1 = c.shape
            m = np.zeros((r0, n, n, r1))
            m[:, np.arange(n), np.arange(n), :] = c
            cores.append(m)
        return cls(cores)

    def as_vector(self) -> TtVector:
        return TtVector([c.reshape(c.shape[0], -1, c.shape[3]) for c in self.cores])

    @classmethod
    def from_vector(cls, v: TtVector, row_shape, col_shape) -> "TtMatrix":
        return cls([c.reshape(c.shape[0], n, m, c.shape[2])
                    for c, n, m in zip(v.cores, row_shape, col_shape)])

    def round(self, tol: float, max_rank: int | None = None) -> "TtMatrix":
        # Diagonal cores (e.g. parameter dimensions of a generator) are
        # rounded through their diagonals: n entries per mode instead of n^2.
        diag = [_is_diagonal(c) for c in self.cores]
        packed = []
        for c, is_diag in zip(self.cores, diag):
            if is_diag:
                packed.append(np.einsum("annb->anb", c))
            else:
                packed.append(c.reshape(c.shape[0], -1, c.shape[3]))
        rounded = tt_round(TtVector(packed), tol, max_rank)
        cores = []
        for c, is_diag, n, m in zip(rounded.cores, diag, self.row_shape, self.col_shape):
            if is_diag:
                full = np.zeros((c.shape[0], n, n, c.shape[2]))
                full[:, np.arange(n), np.arange(n), :] = c
                cores.append(full)
            else:
                cores.append(c.reshape(c.shape[0], n, m, c.shape[2]))
        return TtMatrix(cores)

    def __add__(self, other: "TtMatrix") -> "TtMatrix":
        if self.row_shape != other.row_shape or self.col_shape != other.col_shape:
            raise ShapeMismatchError("matrix shapes differ")
        return TtMatrix.from_vector(tt_add(self.as_vector(), other.as_vector()),
                                    self.row_shape, self.col_shape)

    def __mul__(self, c: float) -> "TtMatrix":
        cores = list(self.cores)
        cores[0] = cores[0] * float(c)
        return TtMatrix(cores)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, TtVector):
            return tt_matvec(self, other)
        if self.col_shape != other.row_shape:
            raise ShapeMismatchError("inner mode sizes differ")
        cores = []
        for a, b in zip(self.cores, other.cores):
            c = np.einsum("anmb,cmkd->acnkbd", a, b)
            s = c.shape
            cores.append(c.reshape(s[0] * s[1], s[2], s[3], s[4] * s[5]))
        return TtMatrix(cores)

    @property
    def T(self) -> "TtMatrix":
        return TtMatrix([c.transpose(0, 2, 1, 3) for c in self.cores])

    def full(self) -> np.ndarray:
        rows = math.prod(self.row_shape)
        cols = math.prod(self.col_shape)
        _guard(rows * cols)
        v = self.cores[0]
        for c in self.cores[1:]:
            v = np.einsum("anmb,bkjc->ankmjc", v, c)
            s = v.shape
            v = v.reshape(1, s[1] * s[2], s[3] * s[4], s[5])
        return v.reshape(rows, cols)


def _is_diagonal(c: np.ndarray) -> bool:
    if c.shape[1] != c.shape[2] or c.shape[1] == 1:
        return False
    n = c.shape[1]
    off = c.copy()
    off[:, np.arange(n), np.arange(n), :] = 0.0
    return not np.any(off)


def tt_matvec(A: TtMatrix, x: TtVector) -> TtVector:
    if A.col_shape != x.shape:
        raise ShapeMismatchError(f"operator columns {A.col_shape} vs vector {x.shape}")
    cores = []
    for a, c in zip(A.cores, x.cores):
        y = np.einsum("anmb,cmd->acnbd", a, c)
        s = y.shape
        cores.append(y.reshape(s[0] * s[1], s[2], s[3] * s[4]))
    return TtVector(cores)
