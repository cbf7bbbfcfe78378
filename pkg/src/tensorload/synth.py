"""Synthetic bus traces generated from a known parameter set."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import fsolve

from .load_model import (
    BusMeasurement,
    CompositeLoadParams,
    composite_output,
    dq_transform,
    find_equilibrium,
    motor_rhs,
)


@dataclass(frozen=True)
class TraceShape:
    """Voltage profile of a synthetic experiment.

    ``kind`` is one of ``constant``, ``step``, ``ramp`` or ``sag``. For a
    step the voltage moves to ``level`` at ``t_start`` and stays there; a
    ramp reaches ``level`` linearly over ``duration``; a sag holds ``level``
    for ``duration`` seconds and then recovers to ``V0``.
    """

    kind: str = "sag"
    V0: float = 1.0
    level: float = 0.95
    t_start: float = 0.2
    duration: float = 0.5
    t_end: float = 2.0
    dt: float = 0.01
    theta: float = 0.0
    P0: float = 0.6
    Q0: float = 0.3
    noise: float = 0.0
    seed: int = 0

    def voltage(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.V0)
        if self.kind == "step":
            return np.where(t >= self.t_start - 1e-12, self.level, self.V0)
        if self.kind == "ramp":
            frac = np.clip((t - self.t_start) / self.duration, 0.0, 1.0)
            return self.V0 + frac * (self.level - self.V0)
        if self.kind == "sag":
            inside = (t >= self.t_start - 1e-12) & (t < self.t_start + self.duration - 1e-12)
            return np.where(inside, self.level, self.V0)
        raise ValueError(f"unknown trace kind {self.kind!r}")

    def times(self):
        n = int(round(self.t_end / self.dt)) + 1
        return np.arange(n) * self.dt


def _self_consistent_output(x, V, theta, params, baseline, guess):
    # The d/q angle depends on the measured power, which here is the model's
    # own output: solve the 2x2 fixed point.
    def resid(pq):
        m = BusMeasurement(0.0, V, theta, pq[0], pq[1])
        dq = dq_transform(m, params.r_s, params.X_s)
        p, q = composite_output(x, dq, V, params, baseline)
        return [p - pq[0], q - pq[1]]

    sol, info, ier, msg = fsolve(resid, guess, xtol=1e-14, full_output=True)
    if ier != 1 and np.max(np.abs(resid(sol))) > 1e-12:
        raise RuntimeError(f"output fixed point failed: {msg}")
    return sol


def generate_synthetic(shape: TraceShape, truth: CompositeLoadParams, *, max_step: float = 1e-3,
                       slip_sign: int = 1) -> list[BusMeasurement]:
    """Simulate the composite load along ``shape`` and return the trace.

    The integration matches :func:`simulate_response` (zero-order hold per
    sampling interval, RK4 sub-steps), so re-simulating the returned trace
    at ``truth`` reproduces its P/Q columns. Optional Gaussian noise is added
    to P and Q after generation.
    """
    times = shape.times()
    volts = shape.voltage(times)
    m0 = BusMeasurement(0.0, float(volts[0]), shape.theta, shape.P0, shape.Q0)
    state, baseline = find_equilibrium(m0, truth, slip_sign)
    x = state.as_array()
    out = []
    pq = np.array([shape.P0, shape.Q0])
    for k, t in enumerate(times):
        V = float(volts[k])
        if k == 0:
            pq = np.array([shape.P0, shape.Q0])
        else:
            pq = _self_consistent_output(x, V, shape.theta, truth, baseline, pq)
        meas = BusMeasurement(float(t), V, shape.theta, float(pq[0]), float(pq[1]))
        out.append(meas)
        if k == len(times) - 1:
            break
        dq = dq_transform(meas, truth.r_s, truth.X_s)
        dt = times[k + 1] - t
        nsub = max(1, int(math.ceil(dt / max_step - 1e-9)))
        h = dt / nsub
        for _ in range(nsub):
            k1 = motor_rhs(x, dq, truth, baseline.T_m0, slip_sign)
            k2 = motor_rhs(x + 0.5 * h * k1, dq, truth, baseline.T_m0, slip_sign)
            k3 = motor_rhs(x + 0.5 * h * k2, dq, truth, baseline.T_m0, slip_sign)
            k4 = motor_rhs(x + h * k3, dq, truth, baseline.T_m0, slip_sign)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if shape.noise > 0:
        rng = np.random.default_rng(shape.seed)
        eps = rng.normal(0.0, shape.noise, size=(len(out), 2))
        out = [BusMeasurement(m.t, m.V, m.theta, m.P + e[0], m.Q + e[1]) for m, e in zip(out, eps)]
    return out
