"""
Composite load model: ZIP static load in parallel with a third-order
induction motor.

Every model function broadcasts over numpy arrays, so the same code serves
a single time-domain simulation, a batch of parameter sets, and the drift
evaluation on tensor grid nodes.

Units are per-unit on the measurement base; time is in seconds.

Motor equations (state v'_d, v'_q, s)::

    dv'_d/dt = -r_r/(X_r+X_m) * (v'_d + X_m^2/(X_r+X_m) * i_q) + s v'_q
    dv'_q/dt = -r_r/(X_r+X_m) * (v'_q - X_m^2/(X_r+X_m) * i_d) - s v'_d
    ds/dt    = (T_m0 (1-s)^2 - v'_d i_d - v'_q i_q) / (2H)

with stator currents from (r_s + jX')(i_d + j i_q) = (U - v') and
X' = X_s + X_m X_r / (X_m + X_r).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

PARAM_NAMES = ("a_p", "b_p", "a_q", "b_q", "r_s", "X_s", "r_r", "X_r", "X_m", "H", "omega")
STATE_NAMES = ("v_d_prime", "v_q_prime", "s")

# Default feasible box for the motor state; used for divergence detection.
DEFAULT_STATE_BOUNDS = {
    "v_d_prime": (-1.5, 1.5),
    "v_q_prime": (-1.5, 1.5),
    "s": (0.0, 1.0),
}


class ModelDomainError(ValueError):
    """An input lies outside the domain of a model equation."""


class SingularityError(ArithmeticError):
    """A model equation hit a zero denominator."""


class InfeasibleInitializationError(RuntimeError):
    """No motor equilibrium exists in the feasible slip range."""


class DivergenceError(RuntimeError):
    def __init__(self, variable: str, value: float, time: float):
        super().__init__(
            f"state {variable} left its feasible box (value {value:.6g} at t={time:.6g} s)"
        )
        self.variable = variable
        self.value = value
        self.time = time


@dataclass(frozen=True)
class CompositeLoadParams:
    """The 11 ZIP + induction motor parameters.

    Fields may be floats or broadcast-compatible arrays (batched parameter
    sets); validation runs elementwise.
    """

    a_p: float
    b_p: float
    a_q: float
    b_q: float
    r_s: float
    X_s: float
    r_r: float
    X_r: float
    X_m: float
    H: float
    omega: float

    def __post_init__(self):
        om = np.asarray(self.omega)
        if np.any(om < 0) or np.any(om > 1):
            raise ModelDomainError(f"omega must lie in [0, 1], got {self.omega}")
        for name in ("r_s", "X_s", "r_r", "X_r", "X_m", "H"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ModelDomainError(f"{name} must be > 0, got {getattr(self, name)}")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_values(self, **kw) -> "CompositeLoadParams":
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "CompositeLoadParams":
        unknown = set(d) - set(PARAM_NAMES)
        if unknown:
            raise KeyError(f"unknown parameter label(s): {sorted(unknown)}")
        return cls(**{k: d[k] for k in PARAM_NAMES})


# Generating truth used throughout the synthetic experiments.
REFERENCE_PARAMS = CompositeLoadParams(
    a_p=0.001, b_p=0.5642, a_q=0.001, b_q=0.6626,
    r_s=0.049, X_s=0.096, r_r=0.044, X_r=0.244, X_m=2.96, H=0.93, omega=0.5,
)


@dataclass(frozen=True)
class MotorState:
    v_d_prime: float
    v_q_prime: float
    s: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_d_prime, self.v_q_prime, self.s], dtype=float)


@dataclass(frozen=True)
class BusMeasurement:
    t: float
    V: float
    theta: float
    P: float
    Q: float


@dataclass(frozen=True)
class BaselineOperatingPoint:
    V0: float
    P_zip0: float
    Q_zip0: float
    T_m0: float

    def __post_init__(self):
        if np.any(np.asarray(self.V0) <= 0):
            raise ModelDomainError(f"V0 must be > 0, got {self.V0}")
        if np.any(np.asarray(self.T_m0) < 0):
            raise ModelDomainError(f"T_m0 must be >= 0, got {self.T_m0}")


@dataclass(frozen=True)
class DqVoltage:
    delta: float
    U_d: float
    U_q: float


@dataclass(frozen=True)
class MotorCurrents:
    i_d: float
    i_q: float


# -- algebraic relations ------------------------------------------------------


def zip_power(params: CompositeLoadParams, baseline: BaselineOperatingPoint, V):
    V = np.asarray(V, dtype=float)
    if np.any(V <= 0) or np.any(np.asarray(baseline.V0) <= 0):
        raise ModelDomainError("ZIP model needs V > 0 and V0 > 0")
    r = V / baseline.V0
    p = params.a_p * r**2 + params.b_p * r + 1.0 - params.a_p - params.b_p
    q = params.a_q * r**2 + params.b_q * r + 1.0 - params.a_q - params.b_q
    return baseline.P_zip0 * p, baseline.Q_zip0 * q


def _dq_angle(V, theta, P, Q, r_s, X_s):
    # Load current I = conj(S / (V e^{j theta})), magnitude I, angle alpha.
    current = np.conj((P + 1j * Q) / (V * np.exp(1j * theta)))
    I = np.abs(current)
    phi = theta - np.angle(current)
    num = X_s * I * np.cos(phi) - r_s * I * np.sin(phi)
    den = V - (r_s * I * np.cos(phi) + X_s * I * np.sin(phi))
    if np.any(np.abs(den) < 1e-12):
        raise SingularityError("d/q transform denominator vanished")
    return np.arctan(num / den)


def dq_transform(meas: BusMeasurement, r_s, X_s) -> DqVoltage:
    """Rotate the bus voltage onto the motor d/q axes."""
    if np.any(np.asarray(meas.V) <= 0):
        raise ModelDomainError(f"V must be > 0, got {meas.V}")
    delta = _dq_angle(meas.V, meas.theta, meas.P, meas.Q, r_s, X_s)
    return DqVoltage(delta=delta, U_d=-meas.V * np.sin(delta), U_q=meas.V * np.cos(delta))


def transient_reactance(params: CompositeLoadParams) -> float:
    total = params.X_m + params.X_r
    if np.any(np.asarray(total) == 0):
        raise ModelDomainError("X_m + X_r must be nonzero")
    return params.X_s + params.X_m * params.X_r / total


def im_currents(state: MotorState, dq: DqVoltage, r_s, X_prime) -> MotorCurrents:
    den = r_s**2 + X_prime**2
    if np.any(np.asarray(den) == 0):
        raise SingularityError("r_s and X' are both zero")
    dud = dq.U_d - state.v_d_prime
    duq = dq.U_q - state.v_q_prime
    return MotorCurrents(
        i_d=(r_s * dud + X_prime * duq) / den,
        i_q=(r_s * duq - X_prime * dud) / den,
    )


def im_derivatives(state: MotorState, currents: MotorCurrents, params: CompositeLoadParams,
                   T_m0, slip_sign: int = 1):
    """Time derivatives (dv'_d, dv'_q, ds).

    ``slip_sign=-1`` flips the rotational slip terms of the two transient
    voltage equations (the other common textbook convention).
    """
    if np.any(np.asarray(params.H) <= 0):
        raise ModelDomainError("H must be > 0")
    X0 = params.X_r + params.X_m
    if np.any(np.asarray(X0) <= 0):
        raise ModelDomainError("X_r + X_m must be > 0")
    a = params.r_r / X0
    b = params.X_m**2 / X0
    vd, vq, s = state.v_d_prime, state.v_q_prime, state.s
    dvd = -a * (vd + b * currents.i_q) + slip_sign * s * vq
    dvq = -a * (vq - b * currents.i_d) - slip_sign * s * vd
    te = vd * currents.i_d + vq * currents.i_q
    ds = (T_m0 * (1.0 - s) ** 2 - te) / (2.0 * params.H)
    return dvd, dvq, ds


def im_power(dq: DqVoltage, currents: MotorCurrents):
    P = dq.U_d * currents.i_d + dq.U_q * currents.i_q
    Q = dq.U_d * currents.i_q - dq.U_q * currents.i_d
    return P, Q


def composite_power(zip_pq, im_pq, omega):
    om = np.asarray(omega)
    if np.any(om < 0) or np.any(om > 1):
        raise ModelDomainError(f"omega must lie in [0, 1], got {omega}")
    return (
        omega * zip_pq[0] + (1.0 - omega) * im_pq[0],
        omega * zip_pq[1] + (1.0 - omega) * im_pq[1],
    )


def rmse(predicted, measured) -> float:
    predicted = np.asarray(predicted, dtype=float)
    measured = np.asarray(measured, dtype=float)
    if predicted.shape != measured.shape or predicted.size == 0:
        raise ValueError(
            f"rmse needs equal non-empty lengths, got {predicted.shape} vs {measured.shape}"
        )
    return float(np.sqrt(np.mean((predicted - measured) ** 2)))


# -- vector field -------------------------------------------------------------


def motor_rhs(x, dq: DqVoltage, params: CompositeLoadParams, T_m0, slip_sign: int = 1):
    """Drift of the motor state; ``x`` has the state on its leading axis."""
    state = MotorState(x[0], x[1], x[2])
    cur = im_currents(state, dq, params.r_s, transient_reactance(params))
    return np.stack(np.broadcast_arrays(*im_derivatives(state, cur, params, T_m0, slip_sign)))


def composite_output(x, dq: DqVoltage, V, params: CompositeLoadParams,
                     baseline: BaselineOperatingPoint):
    """(P_hat, Q_hat) for motor state ``x`` at bus voltage ``V``."""
    state = MotorState(x[0], x[1], x[2])
    cur = im_currents(state, dq, params.r_s, transient_reactance(params))
    return composite_power(zip_power(params, baseline, V), im_power(dq, cur), params.omega)


# -- initialization -----------------------------------------------------------


def _flux_equilibrium(s, U_d, U_q, params: CompositeLoadParams, slip_sign: int = 1):
    """Transient voltages zeroing the two flux equations at slip ``s``.

    Both equations are linear in (v'_d, v'_q) once s is fixed.
    """
    Xp = transient_reactance(params)
    den = params.r_s**2 + Xp**2
    X0 = params.X_r + params.X_m
    a = params.r_r / X0
    b = params.X_m**2 / X0
    # i_d = c1*(U_d - vd) + c2*(U_q - vq), i_q = c1*(U_q - vq) - c2*(U_d - vd)
    c1 = params.r_s / den
    c2 = Xp / den
    ss = slip_sign * s
    # eq5: -a*vd - a*b*i_q + ss*vq = 0 ; eq6: -a*vq + a*b*i_d - ss*vd = 0
    m11 = -a - a * b * c2
    m12 = ss + a * b * c1
    r1 = a * b * (c1 * U_q - c2 * U_d)
    m21 = -ss - a * b * c1
    m22 = -a - a * b * c2
    r2 = -a * b * (c1 * U_d + c2 * U_q)
    det = m11 * m22 - m12 * m21
    vd = (r1 * m22 - m12 * r2) / det
    vq = (m11 * r2 - m21 * r1) / det
    return vd, vq


def find_equilibrium(meas0: BusMeasurement, params: CompositeLoadParams, slip_sign: int = 1,
                     motor_share_P: float | None = None):
    """Steady motor state and ZIP baseline matching the first sample.

    The motor is initialized to carry the measured real power P0 (in the
    per-unit of its own share), so that with ``P_zip0 = P0`` the mixture
    reproduces P0 for every omega. T_m0 then zeroes the slip equation and
    Q_zip0 absorbs the reactive mismatch.

    Returns ``(MotorState, BaselineOperatingPoint)``.
    """
    dq = dq_transform(meas0, params.r_s, params.X_s)
    target = meas0.P if motor_share_P is None else motor_share_P
    Xp = transient_reactance(params)

    def state_at(s):
        vd, vq = _flux_equilibrium(s, dq.U_d, dq.U_q, params, slip_sign)
        return MotorState(vd, vq, s)

    def p_mismatch(s):
        st = state_at(s)
        return im_power(dq, im_currents(st, dq, params.r_s, Xp))[0] - target

    # Scan for the first (lowest-slip, stable branch) crossing.
    grid = np.concatenate([np.linspace(1e-6, 0.05, 201)[:-1], np.linspace(0.05, 1.0, 191)])
    vals = p_mismatch(grid)
    crossing = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    if crossing.size == 0:
        if params.omega == 1.0:
            # Static-only load: the motor carries nothing.
            state = MotorState(dq.U_d, dq.U_q, 1.0)
            return state, BaselineOperatingPoint(meas0.V, meas0.P, meas0.Q, 0.0)
        raise InfeasibleInitializationError(
            f"motor cannot draw P={target:.4g} pu at V={meas0.V:.4g} pu for any slip in (0, 1]"
        )
    k = crossing[0]
    s0 = brentq(p_mismatch, grid[k], grid[k + 1], xtol=1e-15, rtol=1e-15, maxiter=200)
    state = state_at(s0)
    cur = im_currents(state, dq, params.r_s, Xp)
    P_im, Q_im = im_power(dq, cur)
    te = state.v_d_prime * cur.i_d + state.v_q_prime * cur.i_q
    T_m0 = te / (1.0 - s0) ** 2
    om = params.omega
    if om > 0:
        P_zip0 = (meas0.P - (1.0 - om) * P_im) / om
        Q_zip0 = (meas0.Q - (1.0 - om) * Q_im) / om
    else:
        P_zip0, Q_zip0 = meas0.P, meas0.Q
    return state, BaselineOperatingPoint(meas0.V, P_zip0, Q_zip0, T_m0)


# -- time-domain simulation ---------------------------------------------------


def _check_box(x, t, bounds, skip_nan=False):
    for k, name in enumerate(STATE_NAMES):
        if name not in bounds:
            continue
        lo, hi = bounds[name]
        margin = 0.5 * (hi - lo)
        val = np.asarray(x[k])
        bad = (val < lo - margin) | (val > hi + margin) | np.isinf(val)
        if not skip_nan:
            bad |= np.isnan(val)
        if np.any(bad):
            raise DivergenceError(name, float(val[bad].flat[0]) if val.ndim else float(val), t)


def simulate_response(trace: Sequence[BusMeasurement], params: CompositeLoadParams, *,
                      max_step: float = 1e-3, slip_sign: int = 1, bounds: dict | None = None,
                      init=None, return_states: bool = False, allow_infeasible: bool = False):
    """Integrate the composite load along a measured voltage trace.

    Measurements are held constant over each sampling interval; the
    interval is split into equal RK4 steps no longer than ``max_step``.
    Output sample k is evaluated from the state at t_k and measurement k.

    ``params`` fields may be arrays for a batched run; ``init`` overrides
    the equilibrium initialization with ``(MotorState, BaselineOperatingPoint)``.
    With ``allow_infeasible`` a batched run returns NaN outputs for
    parameter nodes that admit no equilibrium instead of raising.
    Returns ``(P_hat, Q_hat)`` arrays with time on the last axis, plus the
    state history when ``return_states`` is set.
    """
    trace = list(trace)
    if len(trace) == 0:
        raise ValueError("empty trace")
    bounds = DEFAULT_STATE_BOUNDS if bounds is None else bounds
    t = np.array([m.t for m in trace])
    if len(t) > 1:
        dts = np.diff(t)
        if np.any(dts <= 0):
            raise ValueError("trace times must be strictly increasing")
        if not np.allclose(dts, dts[0], rtol=1e-6, atol=1e-12):
            raise ValueError("trace must be uniformly sampled")

    if init is None:
        init = _batched_equilibrium(trace[0], params, slip_sign, allow_infeasible)
    state0, baseline = init
    x = np.stack(np.broadcast_arrays(state0.v_d_prime, state0.v_q_prime, state0.s)).astype(float)
    Xp = transient_reactance(params)

    P_out, Q_out, states = [], [], []
    for k, meas in enumerate(trace):
        dq = dq_transform(meas, params.r_s, params.X_s)
        cur = im_currents(MotorState(*x), dq, params.r_s, Xp)
        p, q = composite_power(zip_power(params, baseline, meas.V), im_power(dq, cur), params.omega)
        P_out.append(p)
        Q_out.append(q)
        if return_states:
            states.append(x.copy())
        if k == len(trace) - 1:
            break
        dt = t[k + 1] - t[k]
        nsub = max(1, int(math.ceil(dt / max_step - 1e-9)))
        h = dt / nsub

        def f(y):
            return motor_rhs(y, dq, params, baseline.T_m0, slip_sign)

        for j in range(nsub):
            k1 = f(x)
            k2 = f(x + 0.5 * h * k1)
            k3 = f(x + 0.5 * h * k2)
            k4 = f(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        _check_box(x, t[k + 1], bounds, skip_nan=allow_infeasible)

    P_out = np.stack(np.broadcast_arrays(*P_out), axis=-1)
    Q_out = np.stack(np.broadcast_arrays(*Q_out), axis=-1)
    if return_states:
        return P_out, Q_out, np.stack(states, axis=-1)
    return P_out, Q_out


def equilibrium_batch(meas0: BusMeasurement, params: CompositeLoadParams, slip_sign: int = 1):
    """Vectorized :func:`find_equilibrium` over array-valued ``params``.

    All parameter fields are broadcast together. Returns
    ``(MotorState, BaselineOperatingPoint, feasible)``; entries where no
    motoring equilibrium exists are NaN and flagged False in ``feasible``.
    The slip root is bracketed on the same scan grid as the scalar version
    and refined by bisection to machine precision.
    """
    arrays = {k: np.asarray(v, dtype=float) for k, v in params.as_dict().items()}
    shape = np.broadcast_shapes(*(a.shape for a in arrays.values()))
    p = {k: np.broadcast_to(v, shape).reshape(-1) for k, v in arrays.items()}
    batch = CompositeLoadParams(**p)
    dq = dq_transform(meas0, batch.r_s, batch.X_s)
    Xp = transient_reactance(batch)

    def p_mismatch(s):
        vd, vq = _flux_equilibrium(s, dq.U_d, dq.U_q, batch, slip_sign)
        return im_power(dq, im_currents(MotorState(vd, vq, s), dq, batch.r_s, Xp))[0] - meas0.P

    grid = np.concatenate([np.linspace(1e-6, 0.05, 201)[:-1], np.linspace(0.05, 1.0, 191)])
    vals = p_mismatch(grid[:, None])
    change = np.sign(vals[:-1]) != np.sign(vals[1:])
    feasible = change.any(axis=0)
    first = np.argmax(change, axis=0)
    lo = grid[first]
    hi = grid[first + 1]
    f_lo = vals[first, np.arange(vals.shape[1])]
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        f_mid = p_mismatch(mid)
        left = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(left, mid, lo)
        f_lo = np.where(left, f_mid, f_lo)
        hi = np.where(left, hi, mid)
    s0 = 0.5 * (lo + hi)
    vd, vq = _flux_equilibrium(s0, dq.U_d, dq.U_q, batch, slip_sign)
    cur = im_currents(MotorState(vd, vq, s0), dq, batch.r_s, Xp)
    P_im, Q_im = im_power(dq, cur)
    te = vd * cur.i_d + vq * cur.i_q
    T_m0 = te / (1.0 - s0) ** 2
    om = batch.omega
    with np.errstate(divide="ignore", invalid="ignore"):
        P_zip0 = np.where(om > 0, (meas0.P - (1.0 - om) * P_im) / om, meas0.P)
        Q_zip0 = np.where(om > 0, (meas0.Q - (1.0 - om) * Q_im) / om, meas0.Q)
    # Static-only nodes without a motor root: the motor carries nothing.
    static = ~feasible & (om == 1.0)
    U_d = np.broadcast_to(dq.U_d, s0.shape)
    U_q = np.broadcast_to(dq.U_q, s0.shape)
    vd = np.where(static, U_d, vd)
    vq = np.where(static, U_q, vq)
    s0 = np.where(static, 1.0, s0)
    T_m0 = np.where(static, 0.0, T_m0)
    P_zip0 = np.where(static, meas0.P, P_zip0)
    Q_zip0 = np.where(static, meas0.Q, Q_zip0)
    feasible = feasible | static
    out = [np.where(feasible, a, np.nan).reshape(shape) for a in (vd, vq, s0, P_zip0, Q_zip0, T_m0)]
    V0 = np.full(shape, float(meas0.V))
    state = MotorState(out[0], out[1], out[2])
    base = BaselineOperatingPoint(V0, out[3], out[4], out[5])
    return state, base, feasible.reshape(shape)


def _batched_equilibrium(meas0: BusMeasurement, params: CompositeLoadParams, slip_sign: int,
                         allow_infeasible: bool = False):
    shapes = [np.shape(v) for v in params.as_dict().values()]
    if all(s == () for s in shapes):
        return find_equilibrium(meas0, params, slip_sign)
    state, base, ok = equilibrium_batch(meas0, params, slip_sign)
    if not allow_infeasible and not np.all(ok):
        bad = np.argwhere(~ok)[0]
        raise InfeasibleInitializationError(
            f"no motoring equilibrium for the parameter node {tuple(int(i) for i in bad)}"
        )
    return state, base


# -- trace I/O ----------------------------------------------------------------

TRACE_HEADER = ("t", "V", "theta", "P", "Q")


def read_trace(path) -> list[BusMeasurement]:
    rows = []
    with open(path, newline="") as fh:
        lines = (ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#"))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRACE_HEADER)}, got {header}")
        for row in reader:
            t, V, th, P, Q = (float(v) for v in row)
            if V <= 0:
                raise ModelDomainError(f"{path}: non-positive voltage at t={t}")
            rows.append(BusMeasurement(t, V, th, P, Q))
    return rows


def write_trace(path, trace: Iterable[BusMeasurement], comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(",".join(TRACE_HEADER) + "\n")
        for m in trace:
            fh.write(",".join(f"{float(v):.17g}" for v in (m.t, m.V, m.theta, m.P, m.Q)) + "\n")
