"""DC4B exciter with PID regulator and the volts-per-hertz limiter."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import List, Tuple

import numpy as np

from .core import ValidationError


STATE_FIELDS = ("v_meas", "pid_integrator", "pid_derivative_filter", "v_regulator", "efd", "feedback_state")
N_STATES = len(STATE_FIELDS)


@dataclass(frozen=True)
class Dc4bParams:
    T_r: float
    K_a: float
    T_a: float
    Vr_min: float
    Vr_max: float
    K_p: float
    K_i: float
    K_d: float
    N_d: float
    K_f: float
    T_f: float
    K_e: float
    T_e: float
    Efd_1: float
    Efd_2: float
    SeEfd_1: float
    SeEfd_2: float
    K_g: float

    @property
    def feedback_active(self) -> bool:
        return self.K_d == 0 and self.K_f != 0 and self.T_f > 0

    @property
    def derivative_active(self) -> bool:
        return self.K_d != 0 and self.N_d > 0

    @cached_property
    def saturation_coefficients(self) -> Tuple[float, float]:
        """``(A, B)`` of ``Se = A * exp(B * efd)`` through both anchors."""

        if self.SeEfd_1 <= 0 or self.SeEfd_2 <= 0:
            raise ValidationError("saturation anchors must be positive", [f"SeEfd_1={self.SeEfd_1:g}", f"SeEfd_2={self.SeEfd_2:g}"])
        if self.Efd_1 == self.Efd_2:
            raise ValidationError("saturation anchors need distinct Efd values")
        b = math.log(self.SeEfd_1 / self.SeEfd_2) / (self.Efd_1 - self.Efd_2)
        a = self.SeEfd_1 / math.exp(b * self.Efd_1)
        return a, b


def validate_dc4b(p: Dc4bParams) -> List[str]:
    """Violated DC4B restrictions, plus basic sanity checks on the time constants."""

    violations = []
    if p.T_f < 0 or (p.T_f == 0 and p.K_f != 0):
        violations.append(f"T_f may only be zero when K_f is zero (K_f={p.K_f:g}, T_f={p.T_f:g})")
    if p.K_d != 0 and p.K_f != 0:
        violations.append(f"stabilization feedback needs K_d = 0 (K_d={p.K_d:g}, K_f={p.K_f:g})")
    if not (p.Efd_1 > p.Efd_2 and p.SeEfd_1 > p.SeEfd_2):
        violations.append(
            f"saturation anchors need Efd_1 > Efd_2 and SeEfd_1 > SeEfd_2 "
            f"(got {p.Efd_1:g}/{p.Efd_2:g}, {p.SeEfd_1:g}/{p.SeEfd_2:g})"
        )
    if p.SeEfd_2 <= 0:
        violations.append("SeEfd_2 must be positive")
    if not 0.0 <= p.K_g <= 1.0:
        violations.append(f"K_g {p.K_g:g} outside [0, 1]")
    if not p.Vr_min < p.Vr_max:
        violations.append("Vr_min must be below Vr_max")
    for name in ("T_r", "T_a", "T_e"):
        if not getattr(p, name) > 0:
            violations.append(f"{name} must be positive")
    return violations


def check_dc4b(p: Dc4bParams) -> Dc4bParams:
    violations = validate_dc4b(p)
    if violations:
        raise ValidationError("invalid DC4B parameters", violations)
    return p


def exciter_saturation(efd, p: Dc4bParams):
    a, b = p.saturation_coefficients
    return a * np.exp(b * efd)


@dataclass(frozen=True)
class Dc4bState:
    v_meas: float = 1.0
    pid_integrator: float = 0.0
    pid_derivative_filter: float = 0.0
    v_regulator: float = 0.0
    efd: float = 1.0
    feedback_state: float = 1.0

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in STATE_FIELDS], dtype=float)

    @classmethod
    def from_array(cls, x: np.ndarray) -> "Dc4bState":
        return cls(*(float(v) for v in x[:N_STATES]))


def dc4b_rhs(x: np.ndarray, v_ref: float, v_terminal: float, vhz_signal: float, p: Dc4bParams) -> np.ndarray:
    v_meas, integ, filt, vr, efd, xf = x

    if p.feedback_active:
        v_feedback = p.K_f * (efd - xf) / p.T_f
        d_xf = (efd - xf) / p.T_f
    else:
        v_feedback = 0.0
        d_xf = 0.0

    error = v_ref + vhz_signal - p.K_g * v_meas - v_feedback

    if p.derivative_active:
        d_term = p.K_d * p.N_d * (error - filt)
        d_filt = p.N_d * (error - filt)
    else:
        d_term = 0.0
        d_filt = 0.0

    u = p.K_p * error + integ + d_term
    d_vr = (p.K_a * u - vr) / p.T_a
    at_upper = vr >= p.Vr_max
    at_lower = vr <= p.Vr_min
    if (at_upper and d_vr > 0) or (at_lower and d_vr < 0):
        d_vr = 0.0

    # conditional integration: hold the integrator while it pushes into a limit
    d_integ = p.K_i * error
    if (at_upper and d_integ > 0) or (at_lower and d_integ < 0):
        d_integ = 0.0

    se = float(exciter_saturation(efd, p))
    d_efd = (vr - (p.K_e + se) * efd) / p.T_e

    return np.array(
        [
            (v_terminal - v_meas) / p.T_r,
            d_integ,
            d_filt,
            d_vr,
            d_efd,
            d_xf,
        ]
    )


def dc4b_derivatives(
    state: Dc4bState,
    v_ref: float,
    v_terminal: float,
    vhz_signal: float,
    p: Dc4bParams,
) -> Dc4bState:
    return Dc4bState.from_array(dc4b_rhs(state.to_array(), v_ref, v_terminal, vhz_signal, p))


def project_dc4b(x: np.ndarray, p: Dc4bParams) -> np.ndarray:
    """Clip the regulator output onto ``[Vr_min, Vr_max]`` after an accepted step."""

    x = np.array(x, dtype=float)
    x[3] = min(max(x[3], p.Vr_min), p.Vr_max)
    return x


def dc4b_steady_state(efd: float, v_terminal: float, p: Dc4bParams) -> Tuple[Dc4bState, float]:
    """Equilibrium exciter state holding ``efd`` at ``v_terminal``, plus the matching ``v_ref``."""

    vr = (p.K_e + float(exciter_saturation(efd, p))) * efd
    if not p.Vr_min <= vr <= p.Vr_max:
        raise ValidationError(
            "operating point beyond regulator capability",
            [f"required Vr {vr:.4f} outside [{p.Vr_min:g}, {p.Vr_max:g}]"],
        )
    u = vr / p.K_a
    if p.K_i != 0:
        error, integ = 0.0, u
    elif p.K_p != 0:
        error, integ = u / p.K_p, 0.0
    else:
        raise ValidationError("regulator with K_p = K_i = 0 cannot hold a field voltage")
    state = Dc4bState(
        v_meas=v_terminal,
        pid_integrator=integ,
        pid_derivative_filter=error,
        v_regulator=vr,
        efd=efd,
        feedback_state=efd,
    )
    return state, p.K_g * v_terminal + error


@dataclass(frozen=True)
class VhzParams:
    enabled: bool = True
    setpoint: float = 1.0
    gain: float = 5.0

    def initial_state(self) -> "VhzState":
        return VhzState(integrator=0.0, setpoint=self.setpoint, gain=self.gain)


@dataclass(frozen=True)
class VhzState:
    integrator: float = 0.0
    setpoint: float = 1.0
    gain: float = 5.0


def vhz_step(state: VhzState, v_terminal: float, freq: float, dt: float) -> Tuple[VhzState, float]:
    """Advance the V/Hz limiter one step; the returned signal is never positive."""

    if not freq > 0:
        raise ValidationError(f"V/Hz limiter needs a positive frequency, got {freq!r}")
    error = v_terminal / freq - state.setpoint
    if error <= 0:
        return replace(state, integrator=0.0), 0.0
    integrator = state.integrator + state.gain * error * dt
    return replace(state, integrator=integrator), -integrator
