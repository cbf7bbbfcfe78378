"""
Coupling the Fokker-Planck density to a measured trace.

The generator is block diagonal over parameter nodes, so the stationary
problem alone cannot rank parameter values: every node carries its own
stationary density. Measurements enter through a transient pass instead:

1. Start each parameter node with all state mass at its own equilibrium
   (deviation frame, ``y = 0``).
2. Step the joint density through the trace with implicit Euler, holding
   each measurement over its sampling interval; the drift is affine in the
   d/q voltages, so each step only recombines three precomputed fields.
3. At every sample, contract the state dimensions to get the conditional
   mean state per parameter node and from it the expected P and Q.
4. Score each node by the mean squared mismatch ``S`` (the squared RMSE
   over both channels) and weight it by ``exp(-S / (2 tau^2))``.

The returned joint density is the stationary density of the operator at
the post-disturbance operating point, started from ``uniform(y) x w(pi)``.
Shifted inverse iteration keeps the per-node masses, so the parameter
marginals carry the likelihood weights and the state marginals the
stationary spread.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fokker_planck import (
    ClmDriftModel,
    DriftField,
    FpOperator,
    StationarySolveConfig,
    assemble_fp_operator,
    stationary_density,
)
from .grid import DiscretizedDomain
from .load_model import BusMeasurement, composite_output, dq_transform
from .tt import TtMatrix, TtVector, amen_solve, tt_cross, tt_from_dense, tt_hadamard

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransientConfig:
    """Settings of the measurement-coupled density computation.

    ``sigma_rel`` is the artificial diffusion per state dimension as a
    fraction of the squared box width per second (so 1e-3 spreads a point
    mass to about 4.5% of the box in one second). ``smoothing`` sets the
    quadratic upwind speed relative to the largest drift.
    """

    sigma_rel: float = 1e-3
    smoothing: float = 0.3
    substeps: int = 1
    solver_tol: float = 1e-6
    max_rank: int = 60
    cross_tol: float = 1e-9
    tau_offset: float = 1e-3
    tau: float | None = None
    steady_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.sigma_rel < 0:
            raise ValueError("sigma_rel must be nonnegative")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass
class FitDiagnostics:
    tau: float
    min_rmse: float
    max_rank: int
    steps: int
    eigenvalue: float = float("nan")
    eigen_residual: float = float("nan")
    eigen_iterations: int = 0
    history: list = field(default_factory=list)


@dataclass
class DensityFit:
    density: TtVector
    weights: np.ndarray
    rmse: np.ndarray
    expected_P: np.ndarray
    expected_Q: np.ndarray
    sigma: tuple[float, ...]
    operator: FpOperator
    diagnostics: FitDiagnostics


def state_sigma(domain: DiscretizedDomain, sigma_rel: float) -> tuple[float, ...]:
    dims = domain.spec.dims[: domain.n_states]
    return tuple(sigma_rel * (d.upper - d.lower) ** 2 for d in dims)


def _lift(domain: DiscretizedDomain, table: np.ndarray) -> TtVector:
    """Parameter-only table as a TT over the full grid (ones on state dims)."""
    ns = domain.n_states
    head = [np.ones((1, n, 1)) for n in domain.shape[:ns]]
    if table.ndim == 0:
        head[0] = head[0] * float(table)
        return TtVector(head)
    return TtVector(head + list(tt_from_dense(np.asarray(table, dtype=float), tol=1e-15).cores))


def _point_mass(domain: DiscretizedDomain) -> TtVector:
    """Unit mass at y = 0 on each state axis, split linearly between the two
    nearest nodes so its mean is exactly zero; ones on parameter dims."""
    cores = []
    for k, n in enumerate(domain.shape):
        if k >= domain.n_states:
            cores.append(np.ones((1, n, 1)))
            continue
        x = domain.nodes[k]
        h = domain.steps[k]
        if not x[0] <= 0.0 <= x[-1]:
            raise ValueError(f"state box {domain.spec.labels[k]} must contain 0 (deviation frame)")
        j = min(int(np.searchsorted(x, 0.0, side="right")) - 1, n - 2)
        j = max(j, 0)
        frac = (0.0 - x[j]) / (x[j + 1] - x[j])
        v = np.zeros(n)
        v[j] = (1.0 - frac) / h
        v[j + 1] = frac / h
        cores.append(v.reshape(1, n, 1))
    return TtVector(cores)


def _state_weights(domain: DiscretizedDomain, moment_dim: int | None):
    ns = domain.n_states
    w = []
    for k in range(domain.ndim):
        if k >= ns:
            w.append(None)
        elif k == moment_dim:
            w.append(domain.steps[k] * domain.nodes[k])
        else:
            w.append(np.full(domain.shape[k], domain.steps[k]))
    return w


def _param_table(x, shape) -> np.ndarray:
    if isinstance(x, TtVector):
        return x.full().reshape(shape)
    return np.broadcast_to(np.asarray(x, dtype=float), shape)


def conditional_means(p: TtVector, domain: DiscretizedDomain) -> tuple[np.ndarray, np.ndarray]:
    """Per-parameter-node state mass and mean state (state axis first)."""
    pshape = domain.shape[domain.n_states:]
    mass = _param_table(p.contract(_state_weights(domain, None)), pshape)
    means = []
    for i in range(domain.n_states):
        m = _param_table(p.contract(_state_weights(domain, i)), pshape)
        with np.errstate(divide="ignore", invalid="ignore"):
            means.append(m / mass)
    return mass, np.stack(means)


class DriftBasis:
    """``mu_i = F_i + U_d G_i + U_q H_i`` for all state dims, built once."""

    def __init__(self, model: ClmDriftModel, tol: float, seed: int = 0):
        self.model = model
        self.parts = []
        for i in range(model.domain.n_states):
            fields = tuple(tt_cross(f, model.domain.shape, tol, seed=seed + 3 * i + j)
                           for j, f in enumerate(model.drift_parts(i)))
            self.parts.append(fields)

    def fields(self, meas: BusMeasurement, *, round_tol: float = 1e-12) -> list[DriftField]:
        dom = self.model.domain
        U_d, U_q = self.model.dq_table(meas)
        ud = _lift(dom, U_d)
        uq = _lift(dom, U_q)
        out = []
        for i, (F, G, H) in enumerate(self.parts):
            mu = (F + tt_hadamard(ud, G) + tt_hadamard(uq, H)).round(round_tol)
            out.append(DriftField(dim=i, values=mu, label=dom.spec.labels[i]))
        return out


def steady_measurement(trace, fraction: float) -> BusMeasurement:
    """Average of the trailing ``fraction`` of the trace (at least one sample)."""
    k = max(1, int(round(len(trace) * fraction)))
    tail = trace[-k:]
    return BusMeasurement(
        t=float(tail[-1].t),
        V=float(np.mean([m.V for m in tail])),
        theta=float(np.mean([m.theta for m in tail])),
        P=float(np.mean([m.P for m in tail])),
        Q=float(np.mean([m.Q for m in tail])),
    )


def expected_outputs(model: ClmDriftModel, means: np.ndarray, meas: BusMeasurement):
    """Expected (P, Q) per parameter node from the conditional mean state.

    The motor currents are affine in the state, so this is the exact
    expectation of the model output under the conditional density.
    """
    x = means + np.nan_to_num(model.x_star) if model.frame == "deviation" else means
    dq = dq_transform(meas, model.param_table("r_s"), model.param_table("X_s"))
    P, Q = composite_output(x, dq, meas.V, model.params, model.baseline)
    bad = ~model.feasible
    return np.where(bad, np.nan, P), np.where(bad, np.nan, Q)


def transient_scores(model: ClmDriftModel, trace, cfg: TransientConfig,
                     basis: DriftBasis | None = None):
    """Propagate the density through ``trace``.

    Returns per-node RMSE, expected P and Q series (time last) and the
    largest TT rank met along the way.
    """
    dom = model.domain
    trace = list(trace)
    t = np.array([m.t for m in trace])
    sigma = state_sigma(dom, cfg.sigma_rel)
    basis = basis or DriftBasis(model, cfg.cross_tol, cfg.seed)
    p = _point_mass(dom)
    pshape = dom.shape[dom.n_states:]
    P_hat = np.empty(pshape + (len(trace),))
    Q_hat = np.empty_like(P_hat)
    max_rank = p.max_rank
    eye = TtMatrix.identity(dom.shape)
    for k, meas in enumerate(trace):
        mass, means = conditional_means(p, dom)
        P_hat[..., k], Q_hat[..., k] = expected_outputs(model, means, meas)
        if k == len(trace) - 1:
            break
        op = assemble_fp_operator(basis.fields(meas), dom, sigma, upwind="quadratic",
                                  smoothing=cfg.smoothing, round_tol=1e-10, seed=cfg.seed)
        h = (t[k + 1] - t[k]) / cfg.substeps
        M = (eye + op.matrix * (-h)).round(1e-12)
        for j in range(cfg.substeps):
            p, rep = amen_solve(M, p, cfg.solver_tol, max_rank=cfg.max_rank, x0=p,
                                seed=cfg.seed + k)
        max_rank = max(max_rank, p.max_rank)
        if k % 20 == 0:
            logger.info("transient step %d/%d: rank %d, solver residual %.2e, mass range "
                        "[%.6f, %.6f]", k, len(trace) - 1, p.max_rank, rep.residual,
                        float(np.nanmin(mass)), float(np.nanmax(mass)))
    P_meas = np.array([m.P for m in trace])
    Q_meas = np.array([m.Q for m in trace])
    S = 0.5 * (np.mean((P_hat - P_meas) ** 2, axis=-1) + np.mean((Q_hat - Q_meas) ** 2, axis=-1))
    rmse = np.sqrt(S)
    return rmse, P_hat, Q_hat, max_rank


def likelihood_weights(rmse: np.ndarray, tau: float) -> np.ndarray:
    """``exp(-rmse^2 / (2 tau^2))``, zero where the model is infeasible."""
    with np.errstate(invalid="ignore"):
        w = np.exp(-(rmse - np.nanmin(rmse)) * (rmse + np.nanmin(rmse)) / (2.0 * tau**2))
    return np.where(np.isfinite(w), w, 0.0)


def default_tau(rmse: np.ndarray, offset: float) -> float:
    """Best attainable RMSE on the grid plus ``offset``."""
    return float(np.nanmin(rmse)) + offset


def fit_density(model: ClmDriftModel, trace, cfg: TransientConfig = TransientConfig(),
                stat_cfg: StationarySolveConfig | None = None) -> DensityFit:
    dom = model.domain
    trace = list(trace)
    basis = DriftBasis(model, cfg.cross_tol, cfg.seed)
    rmse, P_hat, Q_hat, max_rank = transient_scores(model, trace, cfg, basis)
    if not np.any(np.isfinite(rmse)):
        raise RuntimeError("no parameter node admits an equilibrium for this trace")
    tau = cfg.tau if cfg.tau is not None else default_tau(rmse, cfg.tau_offset)
    w = likelihood_weights(rmse, tau)
    logger.info("transient pass done: min RMSE %.3e, tau %.3e", float(np.nanmin(rmse)), tau)

    sigma = state_sigma(dom, cfg.sigma_rel)
    op = assemble_fp_operator(basis.fields(steady_measurement(trace, cfg.steady_fraction)), dom,
                              sigma, upwind="quadratic", smoothing=cfg.smoothing,
                              round_tol=1e-10, seed=cfg.seed)
    p0 = _lift(dom, w)
    stat_cfg = stat_cfg or StationarySolveConfig(tol=1e-6, solver_tol=1e-6, seed=cfg.seed)
    p, rep = stationary_density(op, stat_cfg, p0, return_report=True)
    diag = FitDiagnostics(tau=tau, min_rmse=float(np.nanmin(rmse)),
                          max_rank=max(max_rank, p.max_rank), steps=len(trace) - 1,
                          eigenvalue=rep.eigenvalue, eigen_residual=rep.residual,
                          eigen_iterations=rep.iterations, history=rep.history)
    return DensityFit(p, w, rmse, P_hat, Q_hat, sigma, op, diag)
