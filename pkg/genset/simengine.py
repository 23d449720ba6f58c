"""Coupled machine, exciter, governor and load-bank simulation.

The load bank is a series R-L branch at the machine terminals. While a load
is connected the integrated stator states are the loop fluxes
``psi - x * i``, which turns the network into a larger stator resistance and
leakage. With no load the stator is open and its currents stay at zero.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .core import (
    ConvergenceError,
    DivergenceError,
    GensetError,
    PerUnitBase,
    TimeSeries,
    ValidationError,
    rk4_step,
)
from .excitation import (
    Dc4bParams,
    Dc4bState,
    VhzParams,
    VhzState,
    dc4b_rhs,
    dc4b_steady_state,
    project_dc4b,
    validate_dc4b,
    vhz_step,
)
from .governor import Governor, GovernorKind, make_governor
from .machine import (
    STATE_FIELDS as MACHINE_FIELDS,
    MachineCurrents,
    MachineParams,
    MachineState,
    currents_to_flux,
    field_voltage,
    machine_rhs,
    open_circuit_rhs,
    open_circuit_stator_flux,
)
from .signal import PllParams, derive_channels

logger = logging.getLogger(__name__)

N_MACHINE = len(MACHINE_FIELDS)
N_EXCITER = 6
_DELTA = MACHINE_FIELDS.index("delta")
_OMEGA = MACHINE_FIELDS.index("omega")
# regulator output and field voltage within the exciter block
_VR, _EFD = 3, 4

Load = Optional[Tuple[float, float]]


@dataclass(frozen=True)
class Scenario:
    p0: float = 80.0
    q0: float = 0.0
    p1: float = 240.0
    q1: float = 160.0
    t_step: float = 1.0
    t_end: float = 5.0
    dt: float = 1e-4
    v_nominal: float = 277.1
    f_nominal: float = 60.0

    def validate(self) -> List[str]:
        violations = []
        if not 0 < self.dt <= 1e-3:
            violations.append(f"dt {self.dt:g} outside (0, 1e-3]")
        if not self.t_step < self.t_end:
            violations.append("t_step must precede t_end")
        if self.t_step < 0:
            violations.append("t_step must not be negative")
        for name in ("p0", "q0", "p1", "q1"):
            if getattr(self, name) < 0:
                violations.append(f"{name} must not be negative")
        if not (self.v_nominal > 0 and self.f_nominal > 0):
            violations.append("nominal voltage and frequency must be positive")
        return violations

    def check(self) -> "Scenario":
        violations = self.validate()
        if violations:
            raise ValidationError("invalid scenario", violations)
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def k_step(self) -> int:
        return int(round(self.t_step / self.dt))

    def without_step(self) -> "Scenario":
        return dataclasses.replace(self, p1=self.p0, q1=self.q0)


@dataclass(frozen=True)
class SystemParams:
    base: PerUnitBase
    machine: MachineParams
    exciter: Dc4bParams
    vhz: VhzParams
    governor: object
    pll: PllParams = PllParams()

    def with_governor(self, governor) -> "SystemParams":
        return dataclasses.replace(self, governor=governor)


@dataclass(frozen=True)
class SystemState:
    machine: MachineState
    exciter: Dc4bState
    vhz: VhzState
    governor: np.ndarray
    v_ref: float
    omega_ref: float = 1.0

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.machine.to_array(), self.exciter.to_array(), np.asarray(self.governor, dtype=float)])


class _Aux(NamedTuple):
    v_d: float
    v_q: float
    i_d: float
    i_q: float
    p_m: float
    v_t: float


def load_to_impedance(p: float, q: float, v: float, base: PerUnitBase) -> Load:
    """Series R-L branch drawing ``p`` kW and ``q`` kVAR at ``v`` pu.

    Returns ``None`` for an open circuit when both powers are zero.
    """

    if p < 0 or q < 0:
        raise ValidationError(f"load powers must not be negative (p={p:g}, q={q:g})")
    s = complex(p, q) * 1e3 / base.s_base
    if abs(s) == 0:
        return None
    mag2 = abs(s) ** 2
    return v * v * s.real / mag2, v * v * s.imag / mag2


def validate_system(params: SystemParams, kind) -> Governor:
    violations = params.machine.validate() + validate_dc4b(params.exciter)
    try:
        governor = make_governor(kind, params.governor)
    except ValidationError as exc:
        violations += exc.violations or [str(exc)]
        governor = None
    if violations:
        raise ValidationError("invalid system parameters", violations)
    return governor


class _CoupledSystem:
    """Right-hand side of the full state vector ``[machine | exciter | governor]``."""

    def __init__(self, params: SystemParams, governor: Governor, v_ref: float, omega_ref: float, load: Load):
        self.params = params
        self.gov = governor
        self.mp = params.machine
        self.exc = params.exciter
        self.wb = params.base.omega_base
        self.v_ref = v_ref
        self.omega_ref = omega_ref
        self.vhz_signal = 0.0
        self.buffer = None
        self.load: Load = None
        self.mp_loop: Optional[MachineParams] = None
        self._set_load(load)

    def _set_load(self, load: Load) -> None:
        self.load = load
        self.mp_loop = self.mp.with_series_load(*load) if load is not None else None

    def loop_flux(self, ym: np.ndarray) -> np.ndarray:
        out = np.array(ym, dtype=float)
        if self.load is None:
            return out
        x = self.load[1]
        out[0] -= x * -(self.mp.d_inverse[0] @ ym[0:3])
        out[3] -= x * -(self.mp.q_inverse[0] @ ym[3:6])
        return out

    def true_flux(self, ym: np.ndarray) -> np.ndarray:
        out = np.array(ym, dtype=float)
        if self.load is None:
            return out
        x = self.load[1]
        out[0] += x * -(self.mp_loop.d_inverse[0] @ ym[0:3])
        out[3] += x * -(self.mp_loop.q_inverse[0] @ ym[3:6])
        return out

    def switch_load(self, Y: np.ndarray, load: Load) -> np.ndarray:
        """Reconnect with a new load keeping the machine flux linkages."""

        true = self.true_flux(Y[:N_MACHINE])
        if load is None:
            true = open_circuit_stator_flux(true, self.mp)
        self._set_load(load)
        Y = np.array(Y, dtype=float)
        Y[:N_MACHINE] = self.loop_flux(true)
        return Y

    def evaluate(self, t: float, Y: np.ndarray) -> Tuple[np.ndarray, _Aux]:
        ym = Y[:N_MACHINE]
        ye = Y[N_MACHINE : N_MACHINE + N_EXCITER]
        yg = Y[N_MACHINE + N_EXCITER :]
        omega = ym[_OMEGA]

        current = self.gov.delay_input(yg)
        delayed = current if self.buffer is None else self.buffer.delayed(t, current)
        p_m = self.gov.power(yg, omega, delayed)
        v_fd = field_voltage(ye[_EFD], self.mp)

        if self.load is not None:
            mp = self.mp_loop
            dym = machine_rhs(ym, 0.0, 0.0, v_fd, p_m / omega, mp, self.wb)
            i_d = -(mp.d_inverse[0] @ ym[0:3])
            i_q = -(mp.q_inverse[0] @ ym[3:6])
            di_d = -(mp.d_inverse[0] @ dym[0:3])
            di_q = -(mp.q_inverse[0] @ dym[3:6])
            r, x = self.load
            v_d = r * i_d + x / self.wb * di_d - omega * x * i_q
            v_q = r * i_q + x / self.wb * di_q + omega * x * i_d
        else:
            dym, v_d, v_q = open_circuit_rhs(ym, v_fd, p_m / omega, self.mp, self.wb)
            i_d = i_q = 0.0

        v_t = math.hypot(v_d, v_q)
        dye = dc4b_rhs(ye, self.v_ref, v_t, self.vhz_signal, self.exc)
        dyg = self.gov.derivatives(yg, omega, self.omega_ref)
        return np.concatenate([dym, dye, dyg]), _Aux(v_d, v_q, i_d, i_q, p_m, v_t)

    def rhs(self, t: float, Y: np.ndarray) -> np.ndarray:
        return self.evaluate(t, Y)[0]

    def exciter_rhs(self, Y: np.ndarray, v_t: float) -> np.ndarray:
        return dc4b_rhs(Y[N_MACHINE : N_MACHINE + N_EXCITER], self.v_ref, v_t, self.vhz_signal, self.exc)

    def project(self, Y: np.ndarray) -> np.ndarray:
        """Clip the limited states of a freshly integrated ``Y`` in place."""

        Y[N_MACHINE : N_MACHINE + N_EXCITER] = project_dc4b(Y[N_MACHINE : N_MACHINE + N_EXCITER], self.exc)
        Y[N_MACHINE + N_EXCITER :] = self.gov.project(Y[N_MACHINE + N_EXCITER :])
        return Y


def _analytic_seed(
    params: SystemParams,
    governor: Governor,
    load: Load,
    v_target: float,
    p_pu: complex,
) -> SystemState:
    mp = params.machine
    if load is None:
        i_d = i_q = 0.0
        v_q = v_target
        theta_d = -0.5 * math.pi
    else:
        current = (p_pu / v_target).conjugate()
        e_q = v_target + complex(mp.Rs, mp.Lq) * current
        theta_d = math.atan2(e_q.imag, e_q.real) - 0.5 * math.pi
        rot = complex(math.cos(-theta_d), math.sin(-theta_d))
        v_dq = v_target * rot
        i_dq = current * rot
        v_q = v_dq.imag
        i_d, i_q = i_dq.real, i_dq.imag
    i_fd = (v_q + mp.Rs * i_q + mp.Ld * i_d) / mp.Lmd
    machine = currents_to_flux(MachineCurrents(i_d, i_q, i_fd, 0.0, 0.0, 0.0), mp, omega=1.0, delta=theta_d)
    efd = mp.Lmd * i_fd
    exciter, v_ref = dc4b_steady_state(efd, v_target, params.exciter)
    t_e = machine.psi_d * i_q - machine.psi_q * i_d
    return SystemState(
        machine=machine,
        exciter=exciter,
        vhz=params.vhz.initial_state(),
        governor=governor.steady_state(t_e, 1.0),
        v_ref=v_ref,
    )


def _residual(system: _CoupledSystem, Y: np.ndarray, v_target: float) -> Tuple[np.ndarray, _Aux]:
    dY, aux = system.evaluate(0.0, Y)
    return np.concatenate([np.delete(dY, _DELTA), [aux.v_t - v_target]]), aux


def _newton(system: _CoupledSystem, Y: np.ndarray, v_target: float, max_iter: int = 50, tol: float = 1e-10):
    """Damped Newton on every state but the rotor angle, plus ``v_ref``."""

    delta = Y[_DELTA]

    def unpack(z):
        full = np.insert(z[:-1], _DELTA, delta)
        system.v_ref = z[-1]
        return full

    def residual(z):
        return _residual(system, unpack(z), v_target)[0]

    z = np.append(np.delete(Y, _DELTA), system.v_ref)
    F = residual(z)
    norm = np.max(np.abs(F))
    for iteration in range(max_iter):
        if norm < tol:
            break
        jac = np.empty((F.size, z.size))
        for j in range(z.size):
            h = 1e-7 * max(1.0, abs(z[j]))
            zp = z.copy()
            zp[j] += h
            jac[:, j] = (residual(zp) - F) / h
        step, *_ = np.linalg.lstsq(jac, -F, rcond=None)
        lam = 1.0
        while lam > 1e-4:
            trial = z + lam * step
            F_trial = residual(trial)
            norm_trial = np.max(np.abs(F_trial))
            if np.isfinite(norm_trial) and norm_trial < norm:
                break
            lam *= 0.5
        else:
            logger.debug("newton line search stalled at residual %.3e", norm)
            break
        z, F, norm = trial, F_trial, norm_trial
        logger.debug("newton iteration %d residual %.3e", iteration, norm)
    Y = unpack(z)
    return Y, float(norm)


def initialize_steady_state(
    scenario: Scenario,
    params: SystemParams,
    kind,
    tol: float = 1e-8,
) -> SystemState:
    """Equilibrium of the coupled system carrying the scenario's initial load."""

    scenario.check()
    kind = GovernorKind.parse(kind)
    governor = validate_system(params, kind)
    base = params.base
    v_target = scenario.v_nominal / base.v_base
    omega_ref = scenario.f_nominal / base.f_base
    load = load_to_impedance(scenario.p0, scenario.q0, v_target, base)
    p_pu = complex(scenario.p0, scenario.q0) * 1e3 / base.s_base

    seed = _analytic_seed(params, governor, load, v_target, p_pu)
    system = _CoupledSystem(params, governor, seed.v_ref, omega_ref, load)
    Y = np.concatenate([system.loop_flux(seed.machine.to_array()), seed.exciter.to_array(), seed.governor])
    Y, residual = _newton(system, Y, v_target)

    if not residual < tol:
        logger.warning("equilibrium residual %.3e after newton, pre-simulating", residual)
        try:
            Y = _settle(system, Y, scenario.dt, 2.0)
        except GensetError as exc:
            raise ConvergenceError(f"equilibrium pre-simulation failed: {exc}", residual) from exc
        Y, residual = _newton(system, Y, v_target)
        if not residual < tol:
            raise ConvergenceError("no steady state found for the initial load", residual)

    ym = system.true_flux(Y[:N_MACHINE])
    state = SystemState(
        machine=MachineState.from_array(ym),
        exciter=Dc4bState.from_array(Y[N_MACHINE : N_MACHINE + N_EXCITER]),
        vhz=params.vhz.initial_state(),
        governor=np.array(Y[N_MACHINE + N_EXCITER :]),
        v_ref=float(system.v_ref),
        omega_ref=omega_ref,
    )
    logger.info(
        "steady state for %s at %.1f kW / %.1f kVAR: efd=%.4f v_ref=%.4f residual=%.2e",
        kind.value, scenario.p0, scenario.q0, state.exciter.efd, state.v_ref, residual,
    )
    return state


def _settle(system: _CoupledSystem, Y: np.ndarray, dt: float, duration: float) -> np.ndarray:
    t = 0.0
    for _ in range(int(round(duration / dt))):
        Y = system.project(rk4_step(system.rhs, t, Y, dt))
        if not np.isfinite(Y).all():
            raise DivergenceError("pre-simulation diverged", t)
        t += dt
    return Y


def steady_state_residual(state: SystemState, scenario: Scenario, params: SystemParams, kind) -> float:
    """Largest absolute state derivative at ``state`` with the initial load connected."""

    governor = validate_system(params, kind)
    load = load_to_impedance(scenario.p0, scenario.q0, scenario.v_nominal / params.base.v_base, params.base)
    system = _CoupledSystem(params, governor, state.v_ref, state.omega_ref, load)
    Y = np.concatenate(
        [system.loop_flux(state.machine.to_array()), state.exciter.to_array(), np.asarray(state.governor, dtype=float)]
    )
    return float(np.max(np.abs(system.rhs(0.0, Y))))


def synthesize_waveforms(
    t: np.ndarray,
    v_d: np.ndarray,
    v_q: np.ndarray,
    i_d: np.ndarray,
    i_q: np.ndarray,
    delta: np.ndarray,
    base: PerUnitBase,
) -> dict:
    """Phase-to-neutral voltages and line currents in volts and amperes."""

    theta = base.omega_base * t + delta
    v_peak = math.sqrt(2.0) * base.v_base
    i_peak = math.sqrt(2.0) * base.i_base
    out = {}
    for suffix, shift in (("a", 0.0), ("b", -2.0 * math.pi / 3.0), ("c", 2.0 * math.pi / 3.0)):
        angle = theta + shift
        cos, sin = np.cos(angle), np.sin(angle)
        out[f"v{suffix}n"] = v_peak * (v_d * cos - v_q * sin)
        out[f"i{suffix}"] = i_peak * (i_d * cos - i_q * sin)
    return out


def simulate(
    scenario: Scenario,
    params: SystemParams,
    kind,
    initial: Optional[SystemState] = None,
    include_states: bool = False,
    include_waveforms: bool = False,
) -> TimeSeries:
    """Fixed-step RK4 run of the load-step scenario.

    Returns ``P`` (kW), ``Q`` (kVAR), ``V`` (V rms) and ``f`` (Hz) measured
    from synthesized three-phase waveforms, plus per-unit states and the
    waveforms themselves on request.
    """

    scenario.check()
    kind = GovernorKind.parse(kind)
    governor = validate_system(params, kind)
    if initial is None:
        initial = initialize_steady_state(scenario, params, kind)
    base = params.base
    v_nominal = scenario.v_nominal / base.v_base
    load0 = load_to_impedance(scenario.p0, scenario.q0, v_nominal, base)
    load1 = load_to_impedance(scenario.p1, scenario.q1, v_nominal, base)

    system = _CoupledSystem(params, governor, initial.v_ref, initial.omega_ref, load0)
    Y = np.concatenate(
        [system.loop_flux(initial.machine.to_array()), initial.exciter.to_array(), np.asarray(initial.governor, dtype=float)]
    )
    system.buffer = governor.new_delay_buffer(Y[N_MACHINE + N_EXCITER :], 0.0)
    vhz = initial.vhz

    dt = scenario.dt
    n = scenario.n_steps
    k_step = scenario.k_step
    flux = np.empty((n + 1, N_MACHINE))
    aux_rows = np.empty((n + 1, len(_Aux._fields)))
    exciter_rows = np.empty((n + 1, 2))
    vhz_signal = np.empty(n + 1)
    logger.info(
        "simulating %s: %.1f/%.1f -> %.1f/%.1f kW/kVAR at t=%.3f s, %d steps of %g s",
        kind.value, scenario.p0, scenario.q0, scenario.p1, scenario.q1, scenario.t_step, n, dt,
    )

    for k in range(n + 1):
        t = k * dt
        if k == k_step and load1 != load0:
            Y = system.switch_load(Y, load1)
        slope, aux = system.evaluate(t, Y)

        flux[k] = system.true_flux(Y[:N_MACHINE])
        exciter_rows[k] = Y[N_MACHINE + _VR], Y[N_MACHINE + _EFD]
        aux_rows[k] = aux

        if params.vhz.enabled:
            previous = system.vhz_signal
            vhz, system.vhz_signal = vhz_step(vhz, aux.v_t, Y[_OMEGA], dt)
            if system.vhz_signal != previous:
                # only the exciter sees the limiter output
                slope[N_MACHINE : N_MACHINE + N_EXCITER] = system.exciter_rhs(Y, aux.v_t)
        vhz_signal[k] = system.vhz_signal
        if k == n:
            break

        Y = system.project(rk4_step(system.rhs, t, Y, dt, k1=slope))
        if not (np.abs(Y) < 1e6).all():
            raise DivergenceError(f"{kind.value} simulation diverged", t)
        system.buffer.push(t + dt, governor.delay_input(Y[N_MACHINE + N_EXCITER :]))

    v_d, v_q, i_d, i_q, p_m, v_t = (np.ascontiguousarray(col) for col in aux_rows.T)
    rec = {name: np.ascontiguousarray(flux[:, j]) for j, name in enumerate(MACHINE_FIELDS)}
    rec.update(
        efd=exciter_rows[:, 1].copy(),
        v_regulator=exciter_rows[:, 0].copy(),
        p_m=p_m,
        v_terminal=v_t,
        vhz_signal=vhz_signal,
        v_d=v_d,
        v_q=v_q,
        i_d=i_d,
        i_q=i_q,
    )

    t = np.arange(n + 1) * dt
    waves = synthesize_waveforms(t, rec["v_d"], rec["v_q"], rec["i_d"], rec["i_q"], rec["delta"], base)
    pll = dataclasses.replace(params.pll, f_nominal=scenario.f_nominal)
    out = derive_channels(TimeSeries(0.0, dt, waves), pll=pll)
    if include_states:
        out = out.with_channels(**rec)
    if include_waveforms:
        out = out.with_channels(**waves)
    return out
