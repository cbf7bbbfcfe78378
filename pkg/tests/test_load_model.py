import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import fsolve

from tensorload.load_model import (
    REFERENCE_PARAMS,
    BaselineOperatingPoint,
    BusMeasurement,
    CompositeLoadParams,
    DivergenceError,
    DqVoltage,
    InfeasibleInitializationError,
    ModelDomainError,
    MotorCurrents,
    MotorState,
    composite_power,
    dq_transform,
    equilibrium_batch,
    find_equilibrium,
    im_currents,
    im_derivatives,
    im_power,
    motor_rhs,
    read_trace,
    rmse,
    simulate_response,
    transient_reactance,
    write_trace,
    zip_power,
)

finite = st.floats(-5, 5, allow_nan=False)
coef = st.floats(-2, 2, allow_nan=False)


def constant_trace(meas0, t_end, dt):
    n = int(round(t_end / dt)) + 1
    return [BusMeasurement(k * dt, meas0.V, meas0.theta, meas0.P, meas0.Q) for k in range(n)]


# -- ZIP ----------------------------------------------------------------------------


@given(coef, coef, coef, coef, st.floats(0.1, 3), st.floats(-2, 2), st.floats(-2, 2))
def test_zip_at_nominal_voltage_returns_baseline(a_p, b_p, a_q, b_q, V0, P0, Q0):
    p = REFERENCE_PARAMS.with_values(a_p=a_p, b_p=b_p, a_q=a_q, b_q=b_q)
    P, Q = zip_power(p, BaselineOperatingPoint(V0, P0, Q0, 0.0), V0)
    assert P == pytest.approx(P0, rel=1e-14, abs=1e-15)
    assert Q == pytest.approx(Q0, rel=1e-14, abs=1e-15)


def test_zip_reference_coefficients_hand_values():
    base = BaselineOperatingPoint(1.0, 1.0, 1.0, 0.0)
    P, _ = zip_power(REFERENCE_PARAMS, base, 0.95)
    _, Q = zip_power(REFERENCE_PARAMS, base, 1.05)
    assert P == pytest.approx(0.97169, abs=5e-6)
    assert Q == pytest.approx(1.03323, abs=5e-6)


def test_zip_rejects_nonpositive_voltage():
    with pytest.raises(ModelDomainError):
        zip_power(REFERENCE_PARAMS, BaselineOperatingPoint(1.0, 1.0, 1.0, 0.0), 0.0)


# -- d/q transform ------------------------------------------------------------------


def test_dq_zero_current_aligns_with_bus_voltage():
    dq = dq_transform(BusMeasurement(0, 1.02, 0.0, 0.0, 0.0), 0.049, 0.096)
    assert dq.delta == 0.0
    assert dq.U_d == pytest.approx(0.0, abs=1e-15)
    assert dq.U_q == pytest.approx(1.02)


def test_dq_angle_matches_phasor_arithmetic():
    r_s, X_s = 0.049, 0.096
    V = 1.0 + 0j
    S = 0.8 + 0.3j
    current = np.conj(S / V)
    # Internal voltage behind the stator impedance; delta is the angle the
    # rotor axis leads the bus voltage by when the drop is subtracted.
    E = V - (r_s + 1j * X_s) * current
    expected = -np.angle(E)
    dq = dq_transform(BusMeasurement(0, 1.0, 0.0, 0.8, 0.3), r_s, X_s)
    assert dq.delta == pytest.approx(expected, abs=1e-12)


@given(st.floats(0.5, 1.5), st.floats(-math.pi, math.pi), st.floats(-1, 1), st.floats(-1, 1))
def test_dq_preserves_voltage_magnitude(V, theta, P, Q):
    dq = dq_transform(BusMeasurement(0, V, theta, P, Q), 0.049, 0.096)
    assert dq.U_d**2 + dq.U_q**2 == pytest.approx(V**2, rel=1e-12)


# -- induction motor ------------------------------------------------------------------


def test_transient_reactance_reference_value():
    assert transient_reactance(REFERENCE_PARAMS) == pytest.approx(0.32142, abs=5e-6)


@pytest.mark.parametrize("field", ["X_r", "X_m"])
def test_transient_reactance_reduces_to_stator_reactance(field):
    # The dataclass forbids zero reactances, so use a duck-typed record.
    vals = REFERENCE_PARAMS.as_dict() | {field: 0.0}
    rec = type("P", (), vals)
    assert transient_reactance(rec) == pytest.approx(REFERENCE_PARAMS.X_s)


def test_currents_vanish_without_voltage_difference():
    cur = im_currents(MotorState(0.3, 0.9, 0.02), DqVoltage(0, 0.3, 0.9), 0.049, 0.32)
    assert (cur.i_d, cur.i_q) == (0.0, 0.0)


def test_currents_resistive_limit():
    cur = im_currents(MotorState(0.1, 0.8, 0.0), DqVoltage(0, 0.3, 0.9), 0.05, 0.0)
    assert cur.i_d == pytest.approx(0.2 / 0.05)
    assert cur.i_q == pytest.approx(0.1 / 0.05)


@given(finite, finite, finite, finite, st.floats(0.01, 1), st.floats(0, 1))
def test_currents_match_complex_linear_solve(vd, vq, ud, uq, r_s, Xp):
    cur = im_currents(MotorState(vd, vq, 0.0), DqVoltage(0, ud, uq), r_s, Xp)
    i = ((ud - vd) + 1j * (uq - vq)) / (r_s + 1j * Xp)
    assert cur.i_d == pytest.approx(i.real, rel=1e-12, abs=1e-12)
    assert cur.i_q == pytest.approx(i.imag, rel=1e-12, abs=1e-12)


def test_slip_derivative_vanishes_at_standstill_without_current():
    _, _, ds = im_derivatives(MotorState(0.4, 0.7, 1.0), MotorCurrents(0.0, 0.0), REFERENCE_PARAMS, 0.8)
    assert ds == 0.0


def test_derivatives_match_scalar_formulas():
    p = REFERENCE_PARAMS
    st_, cur, Tm = MotorState(0.21, 0.87, 0.03), MotorCurrents(0.4, -0.25), 0.55
    X0 = p.X_r + p.X_m
    T0p = X0 / p.r_r  # open-circuit transient time constant (per unit)
    Xdiff = p.X_m**2 / X0  # X - X'
    dvd = -(st_.v_d_prime + Xdiff * cur.i_q) / T0p + st_.s * st_.v_q_prime
    dvq = -(st_.v_q_prime - Xdiff * cur.i_d) / T0p - st_.s * st_.v_d_prime
    ds = (Tm * (1 - st_.s) ** 2 - (st_.v_d_prime * cur.i_d + st_.v_q_prime * cur.i_q)) / (2 * p.H)
    got = im_derivatives(st_, cur, p, Tm)
    np.testing.assert_allclose(got, (dvd, dvq, ds), rtol=1e-13)


def test_im_power_special_cases():
    assert im_power(DqVoltage(0, 0.3, 0.9), MotorCurrents(0.0, 0.0)) == (0.0, 0.0)
    P, Q = im_power(DqVoltage(0, 0.0, 0.9), MotorCurrents(0.2, 0.5))
    assert (P, Q) == pytest.approx((0.9 * 0.5, -0.9 * 0.2))


@given(finite, finite, finite, finite)
def test_im_power_is_complex_power(ud, uq, i_d, i_q):
    # Reactive power follows the motor-side convention Q = U_d i_q - U_q i_d,
    # i.e. the imaginary part of conj(U) * I.
    P, Q = im_power(DqVoltage(0, ud, uq), MotorCurrents(i_d, i_q))
    S = np.conj(ud + 1j * uq) * (i_d + 1j * i_q)
    assert P == pytest.approx(S.real, abs=1e-12)
    assert Q == pytest.approx(S.imag, abs=1e-12)


def test_composite_power_mixture():
    assert composite_power((1.0, 0.4), (0.8, 0.2), 1.0) == (1.0, 0.4)
    assert composite_power((1.0, 0.4), (0.8, 0.2), 0.0) == (0.8, 0.2)
    assert composite_power((1.0, 0.4), (0.8, 0.2), 0.5)[0] == pytest.approx(0.9)
    with pytest.raises(ModelDomainError):
        composite_power((1.0, 0.4), (0.8, 0.2), 1.5)


def test_rmse_values():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmse([1.5, 2.5], [1.0, 2.0]) == pytest.approx(0.5)
    assert rmse([1, 2], [0, 0]) == pytest.approx(math.sqrt(5 / 2))
    with pytest.raises(ValueError):
        rmse([1, 2], [1])
    with pytest.raises(ValueError):
        rmse([], [])


def test_params_validation():
    with pytest.raises(ModelDomainError):
        REFERENCE_PARAMS.with_values(omega=1.2)
    with pytest.raises(ModelDomainError):
        REFERENCE_PARAMS.with_values(H=0.0)
    with pytest.raises(KeyError):
        CompositeLoadParams.from_dict(REFERENCE_PARAMS.as_dict() | {"bogus": 1.0})


# -- equilibrium ----------------------------------------------------------------------


@pytest.mark.parametrize("P0,Q0", [(1.0, 0.5), (0.6, 0.3)])
def test_equilibrium_zeroes_motor_equations(P0, Q0):
    m = BusMeasurement(0, 1.0, 0.0, P0, Q0)
    state, base = find_equilibrium(m, REFERENCE_PARAMS)
    dq = dq_transform(m, REFERENCE_PARAMS.r_s, REFERENCE_PARAMS.X_s)
    f = motor_rhs(state.as_array(), dq, REFERENCE_PARAMS, base.T_m0)
    assert np.max(np.abs(f)) <= 1e-9
    # Independent root-find of the same three equations from a nearby start.
    root = fsolve(lambda x: motor_rhs(x, dq, REFERENCE_PARAMS, base.T_m0),
                  state.as_array() + [0.01, -0.01, 0.005], xtol=1e-13)
    np.testing.assert_allclose(root, state.as_array(), atol=1e-9)


def test_equilibrium_reproduces_first_sample(meas0):
    state, base = find_equilibrium(meas0, REFERENCE_PARAMS)
    P, Q = simulate_response([meas0], REFERENCE_PARAMS)
    assert P[0] == pytest.approx(meas0.P, abs=1e-12)
    assert Q[0] == pytest.approx(meas0.Q, abs=1e-12)
    assert base.P_zip0 == pytest.approx(meas0.P)


def test_static_only_load_has_no_motor_share(meas0):
    state, base = find_equilibrium(meas0.__class__(0, 1.0, 0.0, 5.0, 0.3),
                                   REFERENCE_PARAMS.with_values(omega=1.0))
    assert (base.P_zip0, base.Q_zip0, base.T_m0) == (5.0, 0.3, 0.0)


def test_infeasible_motor_power_raises():
    with pytest.raises(InfeasibleInitializationError):
        find_equilibrium(BusMeasurement(0, 1.0, 0.0, 50.0, 0.3), REFERENCE_PARAMS)


def test_batched_equilibrium_matches_scalar(meas0):
    om = np.linspace(0.1, 0.9, 5)[:, None]
    xs = np.linspace(0.03, 0.29, 4)[None, :]
    state, base, ok = equilibrium_batch(meas0, REFERENCE_PARAMS.with_values(omega=om, X_s=xs))
    assert ok.all()
    for i in range(5):
        for j in range(4):
            s1, b1 = find_equilibrium(meas0, REFERENCE_PARAMS.with_values(omega=float(om[i, 0]),
                                                                      X_s=float(xs[0, j])))
            np.testing.assert_allclose(
                [state.v_d_prime[i, j], state.v_q_prime[i, j], state.s[i, j]],
                s1.as_array(), atol=1e-12)
            assert base.T_m0[i, j] == pytest.approx(b1.T_m0, rel=1e-10)


# -- simulation ------------------------------------------------------------------------


def test_constant_voltage_is_fixed_point(meas0):
    P, Q = simulate_response(constant_trace(meas0, 5.0, 0.01), REFERENCE_PARAMS)
    assert np.max(np.abs(P - meas0.P)) < 1e-8
    assert np.max(np.abs(Q - meas0.Q)) < 1e-8


def test_perturbed_equilibrium_returns(meas0):
    state, base = find_equilibrium(meas0, REFERENCE_PARAMS)
    x0 = state.as_array() + 1e-3
    trace = constant_trace(meas0, 120.0, 0.1)
    _, _, xs = simulate_response(trace, REFERENCE_PARAMS, init=(MotorState(*x0), base),
                                 return_states=True, max_step=0.01)
    assert np.max(np.abs(xs[:, -1] - state.as_array())) < 1e-6


def test_step_settles_on_post_step_equilibrium(meas0):
    # The slow slip mode has a time constant near 9 s, so the horizon is long.
    dt, n = 0.05, 1601
    trace = [BusMeasurement(k * dt, 1.0 if k * dt < 0.5 else 0.97, 0.0, meas0.P, meas0.Q)
             for k in range(n)]
    _, _, xs = simulate_response(trace, REFERENCE_PARAMS, return_states=True, max_step=0.01)
    _, base = find_equilibrium(trace[0], REFERENCE_PARAMS)
    dq = dq_transform(trace[-1], REFERENCE_PARAMS.r_s, REFERENCE_PARAMS.X_s)
    root = fsolve(lambda x: motor_rhs(x, dq, REFERENCE_PARAMS, base.T_m0), xs[:, -1], xtol=1e-14)
    assert np.max(np.abs(xs[:, -1] - root)) < 1e-5


def test_halving_the_integration_step_changes_outputs_little(sag_trace):
    P1, Q1 = simulate_response(sag_trace, REFERENCE_PARAMS, max_step=1e-3)
    P2, Q2 = simulate_response(sag_trace, REFERENCE_PARAMS, max_step=5e-4)
    assert max(np.max(np.abs(P1 - P2)), np.max(np.abs(Q1 - Q2))) < 1e-6


def test_batched_simulation_matches_loop(sag_trace):
    om = np.array([0.3, 0.5, 0.7])
    P, Q = simulate_response(sag_trace, REFERENCE_PARAMS.with_values(omega=om))
    for k, w in enumerate(om):
        Pk, Qk = simulate_response(sag_trace, REFERENCE_PARAMS.with_values(omega=float(w)))
        np.testing.assert_allclose(P[k], Pk, atol=1e-13)
        np.testing.assert_allclose(Q[k], Qk, atol=1e-13)


def test_simulation_rejects_bad_traces(meas0):
    with pytest.raises(ValueError):
        simulate_response([], REFERENCE_PARAMS)
    bad = [meas0, BusMeasurement(0.0, 1.0, 0.0, 0.6, 0.3)]
    with pytest.raises(ValueError):
        simulate_response(bad, REFERENCE_PARAMS)


def test_divergence_is_reported(meas0):
    trace = constant_trace(meas0, 1.0, 0.01)
    state, base = find_equilibrium(meas0, REFERENCE_PARAMS)
    tight = {"s": (state.s - 1e-9, state.s + 1e-9)}
    init = (MotorState(state.v_d_prime, state.v_q_prime, state.s + 1e-3), base)
    with pytest.raises(DivergenceError):
        simulate_response(trace, REFERENCE_PARAMS, init=init, bounds=tight)


# -- trace files --------------------------------------------------------------------


def test_trace_round_trip(tmp_path, sag_trace):
    path = tmp_path / "trace.csv"
    write_trace(path, sag_trace, comment="reference sag")
    back = read_trace(path)
    assert back == sag_trace


def test_trace_header_is_checked(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,V,theta,P,Q\n0,1,0,0.6,0.3\n")
    with pytest.raises(ValueError, match="header"):
        read_trace(path)
