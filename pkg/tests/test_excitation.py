import dataclasses
import math

import numpy as np
import pytest
from scipy import signal as sps

from genset import util
from genset.core import ValidationError, from_mapping, rk4_step
from genset.excitation import (
    Dc4bParams,
    Dc4bState,
    VhzState,
    check_dc4b,
    dc4b_derivatives,
    dc4b_rhs,
    dc4b_steady_state,
    exciter_saturation,
    project_dc4b,
    validate_dc4b,
    vhz_step,
)


@pytest.fixture()
def exciter(config):
    return from_mapping(Dc4bParams, util.section(config, "exciter"), "exciter")


def test_defaults_pass_validation(exciter):
    assert validate_dc4b(exciter) == []
    assert exciter.feedback_active


def test_feedback_time_constant_restriction(exciter):
    assert validate_dc4b(dataclasses.replace(exciter, K_f=0.0, T_f=0.0)) == []
    violations = validate_dc4b(dataclasses.replace(exciter, K_f=0.014, T_f=0.0))
    assert any("T_f" in v for v in violations)


def test_derivative_and_feedback_restriction(exciter):
    both = dataclasses.replace(exciter, K_d=221.19, K_f=0.014)
    assert any("K_d = 0" in v for v in validate_dc4b(both))
    with pytest.raises(ValidationError):
        check_dc4b(both)
    derivative_only = dataclasses.replace(exciter, K_d=221.19, K_f=0.0)
    assert validate_dc4b(derivative_only) == []
    assert derivative_only.derivative_active
    assert not derivative_only.feedback_active


def test_saturation_anchor_restriction(exciter):
    violations = validate_dc4b(dataclasses.replace(exciter, Efd_1=3.0, Efd_2=4.0))
    assert any("Efd_1 > Efd_2" in v for v in violations)
    with pytest.raises(ValidationError):
        check_dc4b(dataclasses.replace(exciter, Efd_1=3.0, Efd_2=4.0))


def test_loop_gain_range(exciter):
    assert validate_dc4b(dataclasses.replace(exciter, K_g=1.2))


def test_saturation_hits_anchors(exciter):
    assert exciter_saturation(exciter.Efd_1, exciter) == pytest.approx(exciter.SeEfd_1, rel=1e-12)
    assert exciter_saturation(exciter.Efd_2, exciter) == pytest.approx(exciter.SeEfd_2, rel=1e-12)


def test_saturation_two_point_exponential(exciter):
    p = dataclasses.replace(exciter, Efd_1=3.0, SeEfd_1=0.66, Efd_2=2.25, SeEfd_2=0.13)
    expected = math.exp(math.log(0.13) + (2.6 - 2.25) / 0.75 * math.log(0.66 / 0.13))
    assert exciter_saturation(2.6, p) == pytest.approx(expected, rel=1e-12)


def test_saturation_rejects_non_positive_anchor(exciter):
    with pytest.raises(ValidationError):
        exciter_saturation(1.0, dataclasses.replace(exciter, SeEfd_2=0.0))


def test_steady_state_has_zero_derivatives(exciter):
    state, v_ref = dc4b_steady_state(1.8, 1.0, exciter)
    derivs = dc4b_derivatives(state, v_ref, 1.0, 0.0, exciter).to_array()
    np.testing.assert_allclose(derivs, 0.0, atol=1e-12)


def test_steady_state_beyond_regulator_limit(exciter):
    with pytest.raises(ValidationError):
        dc4b_steady_state(30.0, 1.0, exciter)


def test_voltage_dip_boosts_field(exciter):
    state, v_ref = dc4b_steady_state(1.8, 1.0, exciter)
    x = state.to_array()
    for k in range(50):
        x = rk4_step(lambda t, y: dc4b_rhs(y, v_ref, 0.95, 0.0, exciter), k * 1e-4, x, 1e-4)
    assert dc4b_rhs(x, v_ref, 0.95, 0.0, exciter)[4] > 0


def test_small_signal_response_matches_transfer_function_model(exciter):
    p = dataclasses.replace(exciter, SeEfd_1=2e-12, SeEfd_2=1e-12)
    state, v_ref = dc4b_steady_state(1.0, 1.0, p)
    dt, n, dv = 1e-4, 5000, -0.01

    x = state.to_array()
    efd = [x[4]]
    for k in range(n):
        x = project_dc4b(rk4_step(lambda t, y: dc4b_rhs(y, v_ref, 1.0 + dv, 0.0, p), k * dt, x, dt), p)
        efd.append(x[4])

    # deviation model, states (v_meas, integrator, v_regulator, efd, feedback)
    kf = p.K_f / p.T_f
    a = np.zeros((5, 5))
    a[0, 0] = -1.0 / p.T_r
    a[1] = p.K_i * np.array([-p.K_g, 0, 0, -kf, kf])
    a[2] = p.K_a / p.T_a * np.array([-p.K_p * p.K_g, 1.0, 0, -p.K_p * kf, p.K_p * kf])
    a[2, 2] -= 1.0 / p.T_a
    a[3, 2] = 1.0 / p.T_e
    a[3, 3] = -p.K_e / p.T_e
    a[4, 3] = 1.0 / p.T_f
    a[4, 4] = -1.0 / p.T_f
    b = np.array([[1.0 / p.T_r], [0], [0], [0], [0]])
    c = np.array([[0, 0, 0, 1.0, 0]])
    t = np.arange(n + 1) * dt
    _, y, _ = sps.lsim((a, b, c, np.zeros((1, 1))), np.full_like(t, dv), t)
    np.testing.assert_allclose(np.array(efd) - 1.0, y, atol=1e-6)


def test_regulator_output_stays_within_limits(exciter):
    p = dataclasses.replace(exciter, K_a=100.0)
    state, v_ref = dc4b_steady_state(1.8, 1.0, p)
    x = state.to_array()
    for k in range(5000):
        x = project_dc4b(rk4_step(lambda t, y: dc4b_rhs(y, v_ref, 0.2, 0.0, p), k * 1e-4, x, 1e-4), p)
        assert p.Vr_min <= x[3] <= p.Vr_max
    assert x[3] == pytest.approx(p.Vr_max)


def test_vhz_below_setpoint_resets():
    state, signal = vhz_step(VhzState(integrator=0.3), 0.98, 1.0, 1e-3)
    assert signal == 0.0
    assert state.integrator == 0.0


def test_vhz_sustained_overflux_keeps_lowering_reference():
    state = VhzState()
    signals = []
    for _ in range(5):
        state, signal = vhz_step(state, 1.05, 1.0, 1e-3)
        signals.append(signal)
    assert all(s < 0 for s in signals)
    assert all(b < a for a, b in zip(signals, signals[1:]))
    state, signal = vhz_step(state, 0.99, 1.0, 1e-3)
    assert signal == 0.0 and state.integrator == 0.0


def test_vhz_rejects_non_positive_frequency():
    with pytest.raises(ValidationError):
        vhz_step(VhzState(), 1.0, 0.0, 1e-3)


def test_dc4b_state_round_trip():
    state = Dc4bState(1.0, 0.1, 0.0, 0.6, 1.1, 1.1)
    assert Dc4bState.from_array(state.to_array()) == state
