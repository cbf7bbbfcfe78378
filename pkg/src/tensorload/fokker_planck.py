"""
Discretized Fokker-Planck generator over the joint state/parameter grid.

The generator differentiates only the state dimensions; every parameter
dimension carries an identity factor, so the operator is block diagonal in
the parameter nodes. Drift terms use a flux-form upwind scheme with
zero-flux (reflecting) boundary faces:

    F_{j+1/2} = mu+_j p_j + mu-_{j+1} p_{j+1} - sigma (p_{j+1} - p_j) / h
    dp_j/dt   = -(F_{j+1/2} - F_{j-1/2}) / h

with ``mu+ = (mu + c)/2`` and ``mu- = (mu - c)/2``. Plain upwinding takes
``c = |mu|``. Any speed ``c >= |mu|`` keeps the same sign structure (hence
the M-matrix property and nonnegative densities) at the price of extra
numerical diffusion ``(c - |mu|) h / 2``. The ``quadratic`` variant uses
``c = (mu^2 + eps^2) / (2 eps)``, which is built from ``mu`` with one
Hadamard product instead of a cross approximation of the kinked ``|mu|``
(whose TT ranks are large). Column sums vanish by construction, so
probability mass is conserved exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import DiscretizedDomain
from .load_model import (
    PARAM_NAMES,
    STATE_NAMES,
    BusMeasurement,
    CompositeLoadParams,
    DqVoltage,
    MotorState,
    dq_transform,
    equilibrium_batch,
    im_currents,
    im_derivatives,
    transient_reactance,
)
from .tt import (
    MAX_DENSE,
    TtMatrix,
    TtVector,
    amen_solve,
    tt_cross,
    tt_dot,
    tt_from_dense,
    tt_hadamard,
    tt_norm,
    tt_scale,
)

logger = logging.getLogger(__name__)


class AssemblyRankError(RuntimeError):
    """The rounded operator still exceeds the configured rank cap."""


class EigensolveError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class DriftField:
    """Drift component ``mu_i`` sampled on the full grid.

    ``speed`` optionally holds the upwind speed field ``c >= |mu|``; when
    absent it is derived from ``values`` during assembly.
    """

    dim: int
    values: TtVector
    label: str = ""
    speed: TtVector | None = None


@dataclass(frozen=True)
class FpOperator:
    matrix: TtMatrix
    domain: DiscretizedDomain
    sigma: tuple[float, ...]
    boundary: str = "reflecting"
    upwind: str = "exact"


@dataclass(frozen=True)
class StationarySolveConfig:
    """Settings of the shifted inverse iteration.

    The iteration solves ``(A - shift I) y = p``. A positive shift keeps
    ``shift I - A`` a nonsingular M-matrix, so every iterate stays
    nonnegative and each block of the parameter-wise null space keeps its
    mass.
    """

    shift: float = 1e-2
    tol: float = 1e-9
    solver_tol: float = 1e-10
    residual_bound: float = 1e-6
    max_rank: int = 80
    max_iters: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0 or self.solver_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.shift <= 0:
            raise ValueError("shift must be positive (it keeps the shifted operator invertible)")


@dataclass
class EigenReport:
    eigenvalue: float
    residual: float
    iterations: int
    max_rank: int
    history: list = field(default_factory=list)


# -- 1-D building blocks --------------------------------------------------------


def face_operators(n: int, h: float):
    """Divergence ``Dv`` (n x n-1) and face selectors ``E0``, ``E1`` (n-1 x n)."""
    dv = np.zeros((n, n - 1))
    j = np.arange(n - 1)
    dv[j, j] = -1.0 / h
    dv[j + 1, j] = 1.0 / h
    e0 = np.zeros((n - 1, n))
    e1 = np.zeros((n - 1, n))
    e0[j, j] = 1.0
    e1[j, j + 1] = 1.0
    return dv, e0, e1


def diffusion_1d(n: int, h: float) -> np.ndarray:
    """Zero-flux second difference (the standard Neumann Laplacian)."""
    dv, e0, e1 = face_operators(n, h)
    return -dv @ (e1 - e0) / h


def _weighted_core(mat1d, dim, field_tt: TtVector) -> list:
    # TT matrix for kron(I, .., mat1d, .., I) @ diag(field)
    cores = []
    for k, c in enumerate(field_tt.cores):
        r0, n, r1 = c.shape
        if k == dim:
            cores.append(np.einsum("nm,amb->anmb", mat1d, c))
        else:
            m = np.zeros((r0, n, n, r1))
            m[:, np.arange(n), np.arange(n), :] = c
            cores.append(m)
    return cores


# -- drift fields -----------------------------------------------------------------


def build_drift_field(drift: Callable[[np.ndarray], np.ndarray], domain: DiscretizedDomain,
                      dim: int, *, tol: float = 1e-8, label: str = "", seed: int = 0,
                      max_rank: int = 60) -> DriftField:
    """Sample ``drift(idx)`` (multi-indices of shape (N, d)) by TT-cross."""
    values = tt_cross(drift, domain.shape, tol, seed=seed, max_rank=max_rank)
    return DriftField(dim=dim, values=values, label=label or domain.spec.labels[dim])


def coordinate_drift(domain: DiscretizedDomain, f: Callable[[np.ndarray], np.ndarray]):
    """Adapt a function of node coordinates (N, d) to the index interface."""

    def drift(idx):
        return f(domain.coordinates(idx))

    return drift


def abs_max(values: TtVector, *, n_sample: int = 4096, seed: int = 0) -> float:
    """Largest |entry| (exact for small grids, sampled otherwise)."""
    if math.prod(values.shape) <= MAX_DENSE // 4:
        return float(np.max(np.abs(values.full())))
    rng = np.random.default_rng(seed)
    idx = np.stack([rng.integers(0, n, size=n_sample) for n in values.shape], axis=1)
    return float(np.max(np.abs(values.entries(idx))))


def upwind_speed(values: TtVector, upwind: str = "exact", smoothing: float = 0.3, *,
                 tol: float = 1e-10, seed: int = 0, max_rank: int = 80) -> TtVector:
    """Speed field ``c >= |mu|`` for the upwind splitting.

    ``exact`` gives ``|mu|`` (tabulated for small grids, cross-approximated
    otherwise); ``quadratic`` gives ``(mu^2 + eps^2) / (2 eps)`` with
    ``eps = smoothing * max|mu|``.
    """
    if upwind == "quadratic":
        eps = smoothing * abs_max(values, seed=seed)
        if eps == 0:
            return tt_scale(values, 0.0)
        sq = tt_hadamard(values, values).round(tol, max_rank)
        return tt_scale(sq + TtVector.ones(values.shape) * (eps * eps), 0.5 / eps).round(tol)
    if upwind != "exact":
        raise ValueError(f"unknown upwind variant {upwind!r}")
    if math.prod(values.shape) <= MAX_DENSE // 4:
        return tt_from_dense(np.abs(values.full()), tol=tol * 1e-2)
    return tt_cross(lambda idx: np.abs(values.entries(idx)), values.shape, tol, seed=seed,
                    max_rank=max_rank)


# -- assembly ---------------------------------------------------------------------


def assemble_fp_operator(drifts: Sequence[DriftField], domain: DiscretizedDomain, sigma,
                         *, upwind: str = "exact", smoothing: float = 0.3,
                         round_tol: float | None = 1e-13, max_rank: int = 400,
                         seed: int = 0) -> FpOperator:
    """Generator ``A`` with upwind drift and zero-flux diffusion on each state dim.

    ``upwind`` selects the speed field (see :func:`upwind_speed`); a field's
    own ``speed`` takes precedence.
    """
    n_states = domain.n_states
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (n_states,))
    if np.any(sig < 0):
        raise ValueError("diffusion coefficients must be nonnegative")
    dims = sorted(d.dim for d in drifts)
    if dims != list(range(n_states)):
        raise ValueError(f"need exactly one drift field per state dimension, got dims {dims}")
    shape = domain.shape
    total = None

    def add(term):
        nonlocal total
        total = term if total is None else total + term

    for f in drifts:
        i = f.dim
        if f.values.shape != shape:
            raise ValueError(f"drift field for dim {i} has shape {f.values.shape}, grid {shape}")
        speed = f.speed
        if speed is None:
            speed = upwind_speed(f.values, upwind, smoothing, seed=seed)
        plus = tt_scale(f.values + speed, 0.5)
        minus = tt_scale(f.values - speed, 0.5)
        dv, e0, e1 = face_operators(shape[i], domain.steps[i])
        add(TtMatrix(_weighted_core(dv @ e0, i, plus)))
        add(TtMatrix(_weighted_core(dv @ e1, i, minus)))
        if sig[i] > 0:
            factors = [np.eye(n) for n in shape]
            factors[i] = sig[i] * diffusion_1d(shape[i], domain.steps[i])
            add(TtMatrix.kron(factors))
    if round_tol is not None:
        total = total.round(round_tol)
    if max(total.ranks) > max_rank:
        raise AssemblyRankError(
            f"operator rank {max(total.ranks)} exceeds the cap {max_rank} after rounding"
        )
    return FpOperator(total, domain, tuple(float(s) for s in sig), upwind=upwind)


def parameter_block(op: FpOperator, pidx: Sequence[int]) -> TtMatrix:
    """State-space operator of a single parameter node (one diagonal block)."""
    ns = op.domain.n_states
    cores = list(op.matrix.cores[:ns])
    carry = np.ones((1, 1))
    for c, j in zip(reversed(op.matrix.cores[ns:]), reversed(list(pidx))):
        carry = c[:, j, j, :] @ carry
    cores[-1] = np.einsum("anmb,bc->anmc", cores[-1], carry)
    return TtMatrix(cores)


# -- densities ---------------------------------------------------------------------


def integral(p: TtVector, domain: DiscretizedDomain) -> float:
    """Midpoint-rule integral over the whole grid."""
    return float(p.contract([np.full(n, h) for n, h in zip(domain.shape, domain.steps)]))


def normalize(p: TtVector, domain: DiscretizedDomain, mass: float = 1.0) -> TtVector:
    total = integral(p, domain)
    if total == 0 or not np.isfinite(total):
        raise EigensolveError("density has zero or non-finite mass", float("nan"))
    return tt_scale(p, mass / total)


def clamp_nonnegative(p: TtVector, *, tol: float = 1e-12, seed: int = 0) -> tuple[TtVector, float]:
    """Zero out negative entries; returns the clamped TT and ``min/max`` before clamping."""
    if math.prod(p.shape) <= MAX_DENSE:
        dense = p.full()
        top = float(np.max(np.abs(dense)))
        ratio = float(dense.min() / top) if top > 0 else 0.0
        if dense.min() >= 0:
            return p, ratio
        return tt_from_dense(np.maximum(dense, 0.0), tol=tol), ratio
    rng = np.random.default_rng(seed)
    idx = np.stack([rng.integers(0, n, size=4096) for n in p.shape], axis=1)
    sample = p.entries(idx)
    top = float(np.max(np.abs(sample)))
    ratio = float(sample.min() / top) if top > 0 else 0.0
    if sample.min() >= 0:
        return p, ratio
    return tt_cross(lambda i: np.maximum(p.entries(i), 0.0), p.shape, max(tol, 1e-8), seed=seed), ratio


def stationary_density(op: FpOperator, cfg: StationarySolveConfig = StationarySolveConfig(),
                       p0: TtVector | None = None, *, return_report: bool = False):
    """Density in the null space of ``A`` by shifted inverse iteration.

    Each step solves ``(A - shift I) y = p`` with AMEn, renormalizes to unit
    integral and clamps negative entries. Iteration stops once the Rayleigh
    quotient changes by less than ``cfg.tol`` and ``|A p| / |p|`` is below
    ``cfg.residual_bound``.

    ``A`` is block diagonal over parameter nodes, so its null space holds one
    density per node; inverse iteration keeps the per-block masses of ``p0``
    (uniform by default).
    """
    domain = op.domain
    A = op.matrix
    shape = domain.shape
    shifted = (A + TtMatrix.identity(shape) * (-cfg.shift)).round(1e-14)
    p = TtVector.ones(shape) if p0 is None else p0
    p = normalize(p, domain)
    lam_prev = np.inf
    history = []
    res = np.inf
    lam = np.nan
    for it in range(1, cfg.max_iters + 1):
        # An inexact inner solve only slows the outer iteration; convergence is
        # judged by the eigen-residual below.
        y, rep = amen_solve(shifted, p, cfg.solver_tol, max_rank=cfg.max_rank, x0=p,
                            seed=cfg.seed + it, raise_on_failure=False)
        if not rep.converged:
            log = logger.warning if rep.residual > 100 * cfg.solver_tol else logger.info
            log("inverse iteration %d: inner solve stopped at residual %.2e",
                           it, rep.residual)
        if not np.isfinite(rep.residual) or rep.residual > 1e-2:
            raise EigensolveError(f"inner solve failed at iteration {it} "
                                  f"(residual {rep.residual:.2e})", float(rep.residual))
        # (A - shift)^-1 maps null vectors to -1/shift times themselves.
        y = tt_scale(y, -1.0)
        p, ratio = clamp_nonnegative(normalize(y, domain), seed=cfg.seed)
        if ratio < -1e-8:
            logger.warning("inverse iteration %d: negative entries down to %.2e of max", it, ratio)
        p = normalize(p.round(cfg.solver_tol * 1e-2), domain)
        Ap = A @ p
        pp = tt_dot(p, p)
        lam = tt_dot(p, Ap) / pp
        res = tt_norm(Ap) / math.sqrt(pp)
        history.append((lam, res))
        logger.info("stationary iter=%d eigenvalue=%.3e residual=%.3e max_rank=%d",
                    it, lam, res, p.max_rank)
        if abs(lam - lam_prev) < cfg.tol and res <= cfg.residual_bound:
            report = EigenReport(float(lam), float(res), it, p.max_rank, history)
            return (p, report) if return_report else p
        lam_prev = lam
    raise EigensolveError(
        f"inverse iteration did not converge in {cfg.max_iters} iterations "
        f"(eigenvalue {lam:.3e}, residual {res:.3e})", float(res))


def evolve_density(op: FpOperator, p0: TtVector, dt: float, steps: int, *, tol: float = 1e-9,
                   max_rank: int = 80, seed: int = 0) -> TtVector:
    """Implicit-Euler steps ``(I - dt A) p_{k+1} = p_k``, renormalized to the initial mass."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    domain = op.domain
    shape = domain.shape
    M = (TtMatrix.identity(shape) + op.matrix * (-dt)).round(1e-14)
    mass = integral(p0, domain)
    p = p0
    for k in range(steps):
        p, _ = amen_solve(M, p, tol, max_rank=max_rank, x0=p, seed=seed + k)
        p = normalize(p, domain, mass)
    return p


# -- composite-load drift -------------------------------------------------------------


class ClmDriftModel:
    """Motor drift ``mu(x, pi)`` evaluated at grid nodes.

    The grid's first three dimensions are the motor states in the order
    ``STATE_NAMES``; the remaining ones are parameters from ``PARAM_NAMES``.
    Parameters not on the grid are taken from ``frozen``. The equilibrium
    of every parameter node follows from the pre-disturbance sample
    ``meas0`` (this also fixes the ZIP baseline and T_m0).

    With ``frame="deviation"`` the state axes measure the offset from the
    node's own equilibrium, ``x = x*(pi) + y``, so a narrow state box
    follows the operating point across the parameter range.
    Parameter nodes without a motoring equilibrium get zero drift and are
    flagged in ``feasible``.
    """

    def __init__(self, domain: DiscretizedDomain, frozen: CompositeLoadParams,
                 meas0: BusMeasurement, *, frame: str = "deviation", slip_sign: int = 1):
        labels = domain.spec.labels
        if tuple(labels[:3]) != STATE_NAMES or domain.n_states != 3:
            raise ValueError(f"grid must start with the motor states {STATE_NAMES}")
        unknown = set(labels[3:]) - set(PARAM_NAMES)
        if unknown:
            raise KeyError(f"unknown parameter label(s): {sorted(unknown)}")
        if frame not in ("deviation", "absolute"):
            raise ValueError("frame must be 'deviation' or 'absolute'")
        self.domain = domain
        self.frozen = frozen
        self.meas0 = meas0
        self.frame = frame
        self.slip_sign = slip_sign
        self.param_labels = tuple(labels[3:])
        self.param_shape = domain.shape[3:]
        n_pi = math.prod(self.param_shape)
        if n_pi > 2_000_000:
            raise ValueError(f"parameter grid has {n_pi} nodes; at most 2e6 are tabulated")
        # Tabulate everything that depends on parameters only.
        mesh = np.meshgrid(*domain.nodes[3:], indexing="ij") if self.param_labels else []
        values = dict(frozen.as_dict())
        for lb, m in zip(self.param_labels, mesh):
            values[lb] = m
        self.params = CompositeLoadParams(**{k: np.broadcast_to(np.asarray(v, float),
                                                                self.param_shape)
                                             for k, v in values.items()})
        state, base, ok = equilibrium_batch(meas0, self.params, slip_sign)
        self.feasible = ok
        self.x_star = np.stack([state.v_d_prime, state.v_q_prime, state.s])
        self.baseline = base

    # -- helpers on parameter tables
    def param_table(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self.params, name))

    def dq_table(self, meas: BusMeasurement):
        """(U_d, U_q) over the parameter grid for one measurement."""
        dq = dq_transform(meas, self.param_table("r_s"), self.param_table("X_s"))
        return (np.broadcast_to(dq.U_d, self.param_shape),
                np.broadcast_to(dq.U_q, self.param_shape))

    def _split(self, idx):
        idx = np.asarray(idx, dtype=int)
        y = np.stack([self.domain.nodes[k][idx[:, k]] for k in range(3)])
        pidx = tuple(idx[:, 3 + j] for j in range(len(self.param_labels)))
        return y, pidx

    def _eval(self, idx, U_d, U_q, dim):
        y, pidx = self._split(idx)
        ok = self.feasible[pidx]
        if self.frame == "deviation":
            x_star = self.x_star[(slice(None),) + pidx]
            x = y + np.nan_to_num(x_star.reshape(3, -1) if pidx else x_star[:, None])
        else:
            x = y
        p = CompositeLoadParams(**{k: np.asarray(v)[pidx] for k, v in self.params.as_dict().items()})
        T_m0 = np.nan_to_num(np.asarray(self.baseline.T_m0)[pidx])
        state = MotorState(x[0], x[1], x[2])
        cur = im_currents(state, DqVoltage(0.0, U_d, U_q), p.r_s, transient_reactance(p))
        out = im_derivatives(state, cur, p, T_m0, self.slip_sign)[dim]
        return np.where(ok, out, 0.0)

    def drift(self, meas: BusMeasurement, dim: int):
        """Index-based drift function for :func:`build_drift_field`."""
        U_d, U_q = self.dq_table(meas)

        def f(idx):
            _, pidx = self._split(idx)
            return self._eval(idx, U_d[pidx], U_q[pidx], dim)

        return f

    def drift_parts(self, dim: int):
        """Index functions (F, G, H) with ``mu = F + U_d G + U_q H``.

        The drift is affine in the d/q voltages, so one set of three fields
        serves every measurement.
        """

        def part(ud, uq, base):
            def f(idx):
                out = self._eval(idx, ud, uq, dim)
                if base:
                    out = out - self._eval(idx, 0.0, 0.0, dim)
                return out

            return f

        return part(0.0, 0.0, False), part(1.0, 0.0, True), part(0.0, 1.0, True)

