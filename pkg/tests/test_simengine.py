import copy
import dataclasses
import math

import numpy as np
import pytest

from genset import util
from genset.core import PerUnitBase, ValidationError
from genset.governor import GovernorKind
from genset.scoring import response_metrics
from genset.signal import ThreePhaseFrame, positive_sequence
from genset.simengine import (
    MACHINE_FIELDS,
    Scenario,
    initialize_steady_state,
    load_to_impedance,
    simulate,
    steady_state_residual,
    synthesize_waveforms,
)


def _system(config, kind, **gov_overrides):
    cfg = copy.deepcopy(config)
    cfg["gov"][kind].update(gov_overrides)
    return util.build_system(cfg, kind)


def test_load_to_impedance_draws_rated_power():
    base = PerUnitBase()
    r, x = load_to_impedance(240.0, 160.0, 1.0, base)
    assert 1.0 / complex(r, x) == pytest.approx(complex(0.6, -0.4))
    assert load_to_impedance(0.0, 0.0, 1.0, base) is None
    with pytest.raises(ValidationError):
        load_to_impedance(-1.0, 0.0, 1.0, base)


def test_scenario_validation():
    assert Scenario().validate() == []
    assert Scenario(dt=2e-3).validate()
    assert Scenario(t_step=6.0, t_end=5.0).validate()
    with pytest.raises(ValidationError):
        Scenario(p1=-10.0).check()
    assert Scenario(dt=1e-4, t_end=0.5).n_steps == 5000


@pytest.mark.parametrize("kind", [k.value for k in GovernorKind])
def test_initial_state_is_an_equilibrium(config, kind):
    params = util.build_system(config, kind)
    scenario = util.build_scenario(config)
    state = initialize_steady_state(scenario, params, kind)
    assert steady_state_residual(state, scenario, params, kind) < 1e-8
    assert state.machine.omega == pytest.approx(1.0)


def test_flat_run_stays_put(short_config):
    params = util.build_system(short_config, "ggov1d")
    scenario = util.build_scenario(short_config).without_step()
    out = simulate(scenario, params, "ggov1d", include_states=True)
    assert np.max(np.abs(out["omega"] - 1.0)) < 1e-4
    tail = out.window(0.3, scenario.t_end)
    np.testing.assert_allclose(tail["P"], scenario.p0, rtol=2e-3)
    np.testing.assert_allclose(tail["Q"], scenario.q0, atol=0.5)
    np.testing.assert_allclose(tail["V"], scenario.v_nominal, rtol=1e-3)
    np.testing.assert_allclose(tail["f"], scenario.f_nominal, atol=1e-3)


@pytest.mark.parametrize("kind", [k.value for k in GovernorKind])
def test_flat_second_holds_the_initial_point(config, kind):
    cfg = copy.deepcopy(config)
    cfg["scenario"].update({"t_step": 0.5, "t_end": 1.0})
    params = util.build_system(cfg, kind)
    scenario = util.build_scenario(cfg).without_step()
    out = simulate(scenario, params, kind)
    base = params.base
    channel_base = {"P": base.s_base / 1e3, "Q": base.s_base / 1e3, "V": base.v_base, "f": base.f_base}
    for ch, ch_base in channel_base.items():
        drift = np.max(np.abs(out[ch] - out[ch][0])) / ch_base
        assert drift < 1e-4, ch


def test_open_circuit_start(short_config):
    cfg = copy.deepcopy(short_config)
    cfg["scenario"].update({"p0": 0.0, "q0": 0.0})
    params = util.build_system(cfg, "degov")
    scenario = util.build_scenario(cfg)
    state = initialize_steady_state(scenario, params, "degov")
    assert state.governor[-1] == pytest.approx(0.0, abs=1e-9)
    out = simulate(scenario.without_step(), params, "degov", initial=state, include_states=True)
    np.testing.assert_allclose(out["i_d"], 0.0, atol=1e-12)
    np.testing.assert_allclose(out.window(0.1, 0.6)["V"], scenario.v_nominal, rtol=1e-3)


def test_invalid_parameters_are_reported(config):
    cfg = copy.deepcopy(config)
    cfg["machine"]["H"] = 0.9
    params = util.build_system(cfg, "simple")
    with pytest.raises(ValidationError) as excinfo:
        simulate(util.build_scenario(cfg), params, "simple")
    assert any("H" in v for v in excinfo.value.violations)


def test_step_output_channels(short_config):
    params = util.build_system(short_config, "ggov1")
    scenario = util.build_scenario(short_config)
    out = simulate(scenario, params, "ggov1", include_states=True, include_waveforms=True)
    for name in ("P", "Q", "V", "f", "van", "ic", "efd", *MACHINE_FIELDS):
        assert name in out
    assert out.n == scenario.n_steps + 1
    before = out.window(0.1, 0.19)
    assert before["P"].mean() == pytest.approx(scenario.p0, rel=5e-3)
    assert out.window(0.2, 0.6)["f"].min() < scenario.f_nominal


def test_recorded_states_line_up(short_config):
    params = util.build_system(short_config, "degov")
    out = simulate(util.build_scenario(short_config), params, "degov", include_states=True)
    np.testing.assert_allclose(out["v_terminal"], np.hypot(out["v_d"], out["v_q"]), rtol=1e-12)
    exciter = params.exciter
    assert (out["v_regulator"] >= exciter.Vr_min).all() and (out["v_regulator"] <= exciter.Vr_max).all()
    for name in ("efd", "p_m", "vhz_signal", "i_q", *MACHINE_FIELDS):
        assert out[name].shape == (out.n,), name
        assert out[name].flags["C_CONTIGUOUS"], name


def test_synthesized_waveforms_are_balanced():
    base = PerUnitBase()
    dt = 1e-4
    t = np.arange(0, 1 / 60, dt)
    ones = np.ones_like(t)
    waves = synthesize_waveforms(t, 0.0 * ones, ones, 0.6 * ones, 0.0 * ones, 0.3 * ones, base)
    v1, i1 = positive_sequence(ThreePhaseFrame(0.0, dt, **waves))
    assert abs(v1) == pytest.approx(math.sqrt(2) * base.v_base, rel=1e-9)
    assert abs(i1) == pytest.approx(0.6 * math.sqrt(2) * base.i_base, rel=1e-9)
    np.testing.assert_allclose(waves["van"] + waves["vbn"] + waves["vcn"], 0.0, atol=1e-9)


@pytest.mark.slow
def test_integration_is_fourth_order(config):
    cfg = copy.deepcopy(config)
    cfg["vhz"]["enabled"] = False
    params = _system(cfg, "simple", tau_d=0.0)
    finals = []
    for dt in (2e-4, 1e-4, 5e-5):
        scenario = dataclasses.replace(util.build_scenario(cfg), t_step=0.02, t_end=0.12, dt=dt)
        out = simulate(scenario, params, "simple", include_states=True)
        finals.append(np.array([out[name][-1] for name in MACHINE_FIELDS]))
    coarse = np.max(np.abs(finals[0] - finals[1]))
    fine = np.max(np.abs(finals[1] - finals[2]))
    assert np.log2(coarse / fine) >= 3.5


SETTLE_DEADLINE = 4.0


@pytest.fixture(scope="module")
def load_step_runs():
    """One load step per governor, run half a second past the settling deadline."""

    cfg = util.load_config()
    cfg["scenario"].update({"t_end": cfg["scenario"]["t_step"] + SETTLE_DEADLINE + 0.5, "dt": 2e-4})
    scenario = util.build_scenario(cfg)
    runs = {}
    for kind in GovernorKind:
        out = simulate(scenario, util.build_system(cfg, kind), kind, include_states=True)
        runs[kind.value] = (out, response_metrics(cfg, out))
    return scenario, runs


@pytest.mark.slow
@pytest.mark.parametrize("kind", [k.value for k in GovernorKind])
def test_load_step_settles_by_the_deadline(load_step_runs, kind):
    scenario, runs = load_step_runs
    out, metrics = runs[kind]
    assert metrics.nadir is not None and metrics.nadir < scenario.f_nominal - 0.01
    settled = out.window(scenario.t_step + SETTLE_DEADLINE, scenario.t_end)
    np.testing.assert_allclose(settled["P"], scenario.p1, rtol=0.01)
    np.testing.assert_allclose(settled["Q"], scenario.q1, rtol=0.02)
    np.testing.assert_allclose(settled["f"], scenario.f_nominal, atol=0.05)


@pytest.mark.slow
def test_nadir_follows_the_rotor(load_step_runs):
    scenario, runs = load_step_runs
    for kind, (out, metrics) in runs.items():
        post = out.window(scenario.t_step, scenario.t_end)
        rotor_nadir = scenario.f_nominal * float(np.min(post["omega"]))
        assert metrics.nadir == pytest.approx(rotor_nadir, abs=0.25), kind
        assert metrics.t_nadir > scenario.t_step + 0.06, kind
    ggov1, ggov1d = runs["ggov1"][1], runs["ggov1d"][1]
    assert abs(ggov1.t_nadir - ggov1d.t_nadir) > 0.01 or abs(ggov1.nadir - ggov1d.nadir) > 0.02
