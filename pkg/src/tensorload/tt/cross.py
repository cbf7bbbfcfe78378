"""
Rank-adaptive TT-cross interpolation of a black-box function on a grid.

The sweep follows the classic maxvol scheme: each core is fitted from the
function sampled on the fiber ``I_left x [n_k] x J_right``, and the index
sets are refreshed with (rectangular) maxvol on an orthonormal basis of
that fiber matrix. Ranks grow by padding each basis with ``rank_kick``
random directions before maxvol, so pivots can leave the span of the
fibers sampled so far.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import TtVector, _chop, tt_add, tt_norm, tt_round, tt_scale

logger = logging.getLogger(__name__)


class CrossEvaluationError(FloatingPointError):
    def __init__(self, index):
        super().__init__(f"function returned a non-finite value at grid index {tuple(index)}")
        self.index = tuple(int(i) for i in index)


@dataclass
class CrossReport:
    sweeps: int
    evaluations: int
    max_rank: int
    sampled_error: float
    converged: bool


def maxvol(a: np.ndarray, tol: float = 1.05, max_iters: int = 100):
    """Rows of a tall matrix forming a quasi-maximal-volume square submatrix.

    Returns ``(rows, B)`` with ``B = a @ inv(a[rows])``; all ``|B| <= tol``
    on exit unless the iteration cap is hit.
    """
    n, r = a.shape
    if n <= r:
        return np.arange(n), np.eye(n)
    rows = _lu_rows(a)
    b = np.linalg.solve(a[rows].T, a.T).T
    for _ in range(max_iters):
        i, j = np.unravel_index(np.argmax(np.abs(b)), b.shape)
        if abs(b[i, j]) <= tol:
            break
        rows[j] = i
        # Rank-one update of B after swapping row j for row i.
        bj = b[:, j].copy()
        bi = b[i, :].copy()
        bi[j] -= 1.0
        b -= np.outer(bj, bi / b[i, j])
    return rows.copy(), b


def _lu_rows(a: np.ndarray) -> np.ndarray:
    """Pivot rows of Gaussian elimination with partial pivoting."""
    a = a.copy()
    n, r = a.shape
    rows = np.empty(r, dtype=int)
    perm = np.arange(n)
    for k in range(r):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        a[[k, p]] = a[[p, k]]
        perm[[k, p]] = perm[[p, k]]
        rows[k] = perm[k]
        if a[k, k] != 0:
            a[k + 1:, k:] -= np.outer(a[k + 1:, k] / a[k, k], a[k, k:])
    return rows


def rect_maxvol(a: np.ndarray, tol: float = 1.1, min_add: int = 0, max_add: int = 2):
    """Square maxvol extended greedily by rows with the largest coefficient norm.

    Returns ``(rows, B)`` with ``B = a @ pinv(a[rows])``.
    """
    n, r = a.shape
    if n <= r:
        return np.arange(n), np.eye(n)
    rows, b = maxvol(a)
    rows = list(rows)
    limit = min(n, r + max_add)
    while len(rows) < limit:
        norms = np.sum(b**2, axis=1)
        norms[rows] = -1.0
        i = int(np.argmax(norms))
        if norms[i] <= tol**2 and len(rows) >= r + min_add:
            break
        rows.append(i)
        b = a @ np.linalg.pinv(a[rows])
    return np.array(rows, dtype=int), b


def _kick(q: np.ndarray, add: int, max_rank: int, rng) -> np.ndarray:
    """Orthonormal basis ``q`` padded with up to ``add`` random directions."""
    add = min(add, max_rank - q.shape[1], q.shape[0] - q.shape[1])
    if add <= 0:
        return q
    aug = np.hstack([q, rng.standard_normal((q.shape[0], add))])
    return np.linalg.qr(aug)[0]


def _basis(z: np.ndarray, tol: float, max_rank: int) -> np.ndarray:
    """Orthonormal basis of the numerical column space of a fiber matrix."""
    u, s, _ = np.linalg.svd(z, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return u[:, :1]
    r = min(_chop(s, tol * np.linalg.norm(s)), max_rank)
    return u[:, :r]


def _fiber_indices(left, n, right, k, d):
    """Full multi-indices for the fiber I_left x [n] x J_right of core k."""
    rl = left.shape[0]
    rr = right.shape[0]
    idx = np.empty((rl, n, rr, d), dtype=int)
    if k > 0:
        idx[..., :k] = left[:, None, None, :]
    idx[..., k] = np.arange(n)[None, :, None]
    if k < d - 1:
        idx[..., k + 1:] = right[None, None, :, :]
    return idx.reshape(-1, d)


def tt_cross(func, shape, tol: float = 1e-6, *, max_sweeps: int = 12, max_rank: int = 60,
             rank_kick: int = 2, init_rank: int = 2, n_check: int = 1000, seed: int = 0,
             return_report: bool = False):
    """Approximate ``func`` on the grid ``shape`` in TT format.

    ``func`` receives an integer array of multi-indices of shape (N, d) and
    returns N values. Sweeps stop when two consecutive approximations differ
    by less than ``tol`` (relative), and the result is then checked on
    ``n_check`` random grid entries.
    """
    shape = tuple(int(n) for n in shape)
    d = len(shape)
    rng = np.random.default_rng(seed)
    n_evals = 0

    def evaluate(idx):
        nonlocal n_evals
        vals = np.asarray(func(idx), dtype=float).reshape(-1)
        n_evals += idx.shape[0]
        bad = ~np.isfinite(vals)
        if np.any(bad):
            raise CrossEvaluationError(idx[np.argmax(bad)])
        return vals

    if d == 1:
        idx = np.arange(shape[0])[:, None]
        out = TtVector([evaluate(idx).reshape(1, -1, 1)])
        if return_report:
            return out, CrossReport(1, n_evals, 1, 0.0, True)
        return out

    # Right index sets J[k] for the dims k..d-1 (k = 1..d-1), random start.
    right = [None] * (d + 1)
    left = [None] * (d + 1)
    left[0] = np.zeros((1, 0), dtype=int)
    right[d] = np.zeros((1, 0), dtype=int)
    r = min(init_rank, max_rank)
    for k in range(d - 1, 0, -1):
        right[k] = np.stack([rng.integers(0, shape[j], size=r) for j in range(k, d)], axis=1)

    # Right-to-left initialization: maxvol on random fibers to get nested J.
    for k in range(d - 1, 0, -1):
        rr = right[k + 1].shape[0]
        rl_guess = np.stack([rng.integers(0, shape[j], size=r) for j in range(0, k)], axis=1)
        vals = evaluate(_fiber_indices(rl_guess, shape[k], right[k + 1], k, d))
        z = vals.reshape(rl_guess.shape[0], shape[k] * rr).T
        q, _ = np.linalg.qr(z)
        rows, _ = maxvol(q)
        ii, jj = np.unravel_index(rows, (shape[k], rr))
        right[k] = np.hstack([ii[:, None], right[k + 1][jj]])

    local_tol = tol / math.sqrt(d)
    prev = None
    converged = False
    sweeps = 0
    cores = [None] * d
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        # Left-to-right.
        for k in range(d - 1):
            rl, rr = left[k].shape[0], right[k + 1].shape[0]
            vals = evaluate(_fiber_indices(left[k], shape[k], right[k + 1], k, d))
            q = _basis(vals.reshape(rl * shape[k], rr), local_tol, max_rank)
            rows, b = maxvol(_kick(q, rank_kick, max_rank, rng))
            cores[k] = b.reshape(rl, shape[k], -1)
            ii, nn = np.unravel_index(rows, (rl, shape[k]))
            left[k + 1] = np.hstack([left[k][ii], nn[:, None]])
        rl = left[d - 1].shape[0]
        vals = evaluate(_fiber_indices(left[d - 1], shape[d - 1], right[d], d - 1, d))
        cores[d - 1] = vals.reshape(rl, shape[d - 1], 1)
        lr_tt = TtVector(cores)

        # Right-to-left.
        for k in range(d - 1, 0, -1):
            rl, rr = left[k].shape[0], right[k + 1].shape[0]
            vals = evaluate(_fiber_indices(left[k], shape[k], right[k + 1], k, d))
            q = _basis(vals.reshape(rl, shape[k] * rr).T, local_tol, max_rank)
            rows, b = maxvol(_kick(q, rank_kick, max_rank, rng))
            cores[k] = b.T.reshape(-1, shape[k], rr)
            nn, jj = np.unravel_index(rows, (shape[k], rr))
            right[k] = np.hstack([nn[:, None], right[k + 1][jj]])
        rr = right[1].shape[0]
        vals = evaluate(_fiber_indices(left[0], shape[0], right[1], 0, d))
        cores[0] = vals.reshape(1, shape[0], rr)
        cur = TtVector(cores)

        diff = tt_norm(tt_add(cur, tt_scale(lr_tt, -1.0)))
        scale = tt_norm(cur)
        change = diff / scale if scale > 0 else diff
        if prev is not None:
            d2 = tt_norm(tt_add(cur, tt_scale(prev, -1.0)))
            change = max(change, d2 / scale if scale > 0 else d2)
        prev = cur
        logger.debug("cross sweep %d: change %.3e, ranks %s", sweep, change, cur.ranks)
        if change < tol:
            # Agreement of consecutive sweeps can be a false plateau; confirm
            # on random entries before stopping.
            result = tt_round(prev, 0.1 * tol)
            err = _sampled_error(result, evaluate, shape, n_check, rng)
            if err <= 10 * tol or n_check <= 0:
                converged = True
                break

    result = tt_round(prev, 0.1 * tol)
    err = _sampled_error(result, evaluate, shape, n_check, rng)
    if err > 10 * tol:
        logger.warning("tt_cross: sampled relative error %.3e exceeds 10x tolerance %.1e",
                       err, tol)
    if return_report:
        return result, CrossReport(sweeps, n_evals, result.max_rank, err, converged)
    return result


def _sampled_error(x: TtVector, evaluate, shape, n, rng) -> float:
    if n <= 0:
        return float("nan")
    idx = np.stack([rng.integers(0, m, size=n) for m in shape], axis=1)
    ref = evaluate(idx)
    approx = x.entries(idx)
    scale = np.linalg.norm(ref)
    diff = np.linalg.norm(approx - ref)
    return float(diff / scale) if scale > 0 else float(diff)
