"""
AMEn solver for linear systems ``A x = b`` in TT format.

One-site alternating sweeps: every core of ``x`` is recomputed from the
Galerkin-projected local system, truncated, and then enriched with a
low-rank approximation ``z`` of the residual before the orthogonality
center moves on. The enrichment is what lets ranks grow where the residual
lives, instead of relying on a fixed-rank ALS.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .core import TtMatrix, TtVector, _chop, tt_add, tt_matvec, tt_norm, tt_round, tt_scale

logger = logging.getLogger(__name__)

# Multi-operand contractions must go through BLAS; the naive loop is far slower.
_es = functools.partial(np.einsum, optimize=True)

DENSE_LOCAL_LIMIT = 2000


class AmenConvergenceError(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    residual: float
    sweeps: int
    max_rank: int
    converged: bool
    history: list = field(default_factory=list)


def _left_step(phi, xc, ac, yc):
    # phi (rx, ra, ry) -> next (rx', ra', ry'): test x, operator A, trial y
    t = _es("xay,yjw->xajw", phi, yc)
    t = _es("xajw,aijb->xibw", t, ac)
    return _es("xibw,xiz->zbw", t, xc)


def _right_step(phi, xc, ac, yc):
    # phi (rx', ra', ry') at bond k+1 -> bond k
    t = _es("yjw,zbw->yjzb", yc, phi)
    t = _es("aijb,yjzb->aiyz", ac, t)
    return _es("xiz,aiyz->xay", xc, t)


def _left_vec(phi, xc, bc):
    return _es("xc,xiz,cid->zd", phi, xc, bc)


def _right_vec(phi, xc, bc):
    return _es("xiz,cid,zd->xc", xc, bc, phi)


def _local_apply(phl, ac, phr, u):
    t = _es("xay,yjw->xajw", phl, u)
    t = _es("xajw,aijb->xibw", t, ac)
    return _es("xibw,zbw->xiz", t, phr)


def _local_rhs(phl, bc, phr):
    return _es("xc,cid,zd->xiz", phl, bc, phr)


def _local_solve(phl, ac, phr, rhs, u0, tol):
    shape = u0.shape
    n = u0.size
    if n <= DENSE_LOCAL_LIMIT:
        mat = _es("xay,aijb,zbw->xizyjw", phl, ac, phr).reshape(n, n)
        try:
            return np.linalg.solve(mat, rhs.reshape(-1)).reshape(shape)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(mat, rhs.reshape(-1), rcond=None)[0].reshape(shape)

    op = spla.LinearOperator(
        (n, n), matvec=lambda v: _local_apply(phl, ac, phr, v.reshape(shape)).reshape(-1),
        dtype=float,
    )
    prec = _block_jacobi(phl, ac, phr, shape)
    sol, _ = spla.gmres(op, rhs.reshape(-1), x0=u0.reshape(-1), rtol=tol, atol=0.0,
                        restart=40, maxiter=20, M=prec)
    return sol.reshape(shape)


def _block_jacobi(phl, ac, phr, shape):
    """Block-Jacobi preconditioner keeping the full coupling on one side.

    The interface with the larger rank is replaced by its diagonal, which
    leaves independent dense blocks of size ``n * r`` (r the smaller rank).
    """
    r0, n, r1 = shape
    if r0 * n <= n * r1:
        # Blocks indexed by the right rank z: (x, i) x (y, j).
        dz = np.einsum("zbz->zb", phr)
        t = _es("aijb,zb->zaij", ac, dz)
        blocks = _es("xay,zaij->zxiyj", phl, t).reshape(r1, r0 * n, r0 * n)
        inv = np.linalg.inv(blocks)

        def apply(v):
            v = v.reshape(r0 * n, r1)
            return np.einsum("zpq,qz->pz", inv, v).reshape(-1)
    else:
        dx = np.einsum("xax->xa", phl)
        t = _es("xa,aijb->xibj", dx, ac)
        blocks = _es("xibj,zbw->xizjw", t, phr).reshape(r0, n * r1, n * r1)
        inv = np.linalg.inv(blocks)

        def apply(v):
            v = v.reshape(r0, n * r1)
            return np.einsum("xpq,xq->xp", inv, v).reshape(-1)

    n_tot = r0 * n * r1
    return spla.LinearOperator((n_tot, n_tot), matvec=apply, dtype=float)


def residual_norm(A: TtMatrix, x: TtVector, b: TtVector) -> float:
    return tt_norm(tt_add(tt_matvec(A, x), tt_scale(b, -1.0)))


def amen_solve(A: TtMatrix, b: TtVector, tol: float = 1e-6, max_sweeps: int = 20,
               max_rank: int = 100, x0: TtVector | None = None, kick_rank: int = 4,
               seed: int = 0, raise_on_failure: bool = True):
    """Solve ``A x = b``; returns ``(x, SolveReport)``.

    The report's ``history`` holds the best relative residual reached after
    each sweep, and the returned ``x`` is the iterate achieving it.
    """
    if A.row_shape != A.col_shape:
        raise ValueError("AMEn needs a square operator")
    if A.col_shape != b.shape:
        raise ValueError(f"operator shape {A.col_shape} does not match rhs {b.shape}")
    bnorm = tt_norm(b)
    if bnorm == 0:
        raise ValueError("right-hand side is zero")
    rng = np.random.default_rng(seed)
    d = b.d
    shape = b.shape

    x = tt_round(b, 1e-2, 4) if x0 is None else x0
    z = TtVector.random(shape, [1] + [kick_rank] * (d - 1) + [1], rng)
    xc = list(x.cores)
    zc = list(z.cores)
    ac = A.cores
    bc = b.cores

    local_tol = tol / math.sqrt(d)
    best = None
    best_res = np.inf
    history = []
    sweeps = 0
    converged = False

    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        # Right-orthogonalize x and z; build right interfaces.
        xc = _right_orth(xc)
        zc = _right_orth(zc)
        phA = [None] * (d + 1)
        phb = [None] * (d + 1)
        pzA = [None] * (d + 1)
        pzb = [None] * (d + 1)
        phA[d] = np.ones((1, 1, 1))
        phb[d] = np.ones((1, 1))
        pzA[d] = np.ones((1, 1, 1))
        pzb[d] = np.ones((1, 1))
        for k in range(d - 1, 0, -1):
            phA[k] = _right_step(phA[k + 1], xc[k], ac[k], xc[k])
            phb[k] = _right_vec(phb[k + 1], xc[k], bc[k])
            pzA[k] = _right_step(pzA[k + 1], zc[k], ac[k], xc[k])
            pzb[k] = _right_vec(pzb[k + 1], zc[k], bc[k])
        phA[0] = np.ones((1, 1, 1))
        phb[0] = np.ones((1, 1))
        pzA[0] = np.ones((1, 1, 1))
        pzb[0] = np.ones((1, 1))

        for k in range(d):
            rhs = _local_rhs(phb[k], bc[k], phb[k + 1])
            u = _local_solve(phA[k], ac[k], phA[k + 1], rhs, xc[k], 0.1 * local_tol)
            if k == d - 1:
                xc[k] = u
                break
            r0, n, r1 = u.shape
            uu, s, vt = np.linalg.svd(u.reshape(r0 * n, r1), full_matrices=False)
            r = _chop(s, 0.1 * local_tol * np.linalg.norm(s))
            r = min(r, max_rank)
            uu = uu[:, :r]
            v = s[:r, None] * vt[:r]
            u_trunc = (uu @ v).reshape(r0, n, r1)

            # Residual projections: z-left/z-right for z, x-left/z-right for x enrichment.
            zres = (_local_rhs(pzb[k], bc[k], pzb[k + 1])
                    - _local_apply(pzA[k], ac[k], pzA[k + 1], u_trunc))
            enr = (_local_rhs(phb[k], bc[k], pzb[k + 1])
                   - _local_apply(phA[k], ac[k], pzA[k + 1], u_trunc))

            rz0, _, rz1 = zres.shape
            qz, _ = np.linalg.qr(np.hstack([zres.reshape(rz0 * n, rz1),
                                            rng.standard_normal((rz0 * n, 1))]))
            qz = qz[:, :rz1] if qz.shape[1] >= rz1 else _pad_cols(qz, rz1)
            zc[k] = qz.reshape(rz0, n, rz1)

            room = max(0, max_rank - r)
            enr_mat = enr.reshape(r0 * n, -1)[:, :room]
            q, rr = np.linalg.qr(np.hstack([uu, enr_mat]))
            xc[k] = q.reshape(r0, n, -1)
            xc[k + 1] = _es("ab,bnc->anc", rr[:, :r] @ v, xc[k + 1])

            phA[k + 1] = _left_step(phA[k], xc[k], ac[k], xc[k])
            phb[k + 1] = _left_vec(phb[k], xc[k], bc[k])
            pzA[k + 1] = _left_step(pzA[k], zc[k], ac[k], xc[k])
            pzb[k + 1] = _left_vec(pzb[k], zc[k], bc[k])

        x = TtVector(xc)
        res = residual_norm(A, x, b) / bnorm
        if res < best_res:
            best, best_res = x, res
        history.append(best_res)
        logger.debug("amen sweep %d: residual %.3e, ranks %s", sweep, res, x.ranks)
        if best_res <= tol:
            converged = True
            break

    x = best
    report = SolveReport(residual=float(best_res), sweeps=sweeps, max_rank=best.max_rank,
                         converged=converged, history=history)
    if not converged and raise_on_failure and best_res > 100 * tol:
        raise AmenConvergenceError(
            f"AMEn stalled at relative residual {best_res:.3e} (tolerance {tol:.1e}, "
            f"max rank {best.max_rank})", report)
    return x, report


def _pad_cols(q, m):
    extra = np.zeros((q.shape[0], m - q.shape[1]))
    return np.hstack([q, extra])


def _right_orth(cores):
    cores = list(cores)
    for k in range(len(cores) - 1, 0, -1):
        r0, n, r1 = cores[k].shape
        q, rr = np.linalg.qr(cores[k].reshape(r0, n * r1).T)
        cores[k] = q.T.reshape(-1, n, r1)
        cores[k - 1] = _es("anb,cb->anc", cores[k - 1], rr)
    return cores
