"""Engine-governor models and the fuel-curve estimator.

Every governor exposes continuous derivatives so the coupled integrator can
advance it together with the machine, plus a ``*_step`` function that
advances one governor alone with the speed held.
"""

from __future__ import annotations

import bisect
import enum
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Type

import numpy as np

from .core import PerUnitBase, ValidationError, rk4_step

logger = logging.getLogger(__name__)


class GovernorKind(str, enum.Enum):
    SIMPLE = "simple"
    DEGOV = "degov"
    GGOV1 = "ggov1"
    GGOV1D = "ggov1d"

    @classmethod
    def parse(cls, value) -> "GovernorKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValidationError(
                f"unknown governor kind {value!r}", [f"expected one of {[k.value for k in cls]}"]
            ) from None

    @property
    def config_section(self) -> str:
        return f"gov.{self.value}"


@dataclass(frozen=True)
class SimpleGovParams:
    K_p: float
    K_i: float
    T_sm: float
    C: float
    C_2: float
    C_3: float
    tau_d: float = 0.01
    K_1: float = 1.0


@dataclass(frozen=True)
class DegovParams:
    T_1: float
    T_2: float
    T_3: float
    T_4: float
    T_5: float
    T_6: float
    K: float
    T_D: float = 0.01


@dataclass(frozen=True)
class Ggov1Params:
    maxerr: float
    minerr: float
    K_p: float
    K_i: float
    K_d: float
    N_d: float
    T_act: float
    valve_open: float
    valve_close: float
    K_turb: float
    T_b: float
    T_c: float
    w_fnl: float
    trate: float = 2.5
    vmin: float = 0.0
    vmax: float = 1.0
    mode: str = "isochronous"


@dataclass(frozen=True)
class Ggov1dParams:
    maxerr: float
    minerr: float
    T_1: float
    T_2: float
    T_3: float
    T_4: float
    T_5: float
    T_6: float
    K: float
    valve_open: float
    valve_close: float
    K_turb: float
    T_b: float
    T_c: float
    w_fnl: float
    trate: float = 2.5
    vmin: float = 0.0
    vmax: float = 1.0
    mode: str = "isochronous"


class DelayBuffer:
    """Time-stamped samples of one signal, read back ``delay`` seconds late.

    Lookups interpolate linearly; a lookup newer than the last stored sample
    interpolates towards the caller's current value.
    """

    def __init__(self, delay: float, initial: float = 0.0, t0: float = 0.0):
        if delay < 0:
            raise ValidationError(f"delay must not be negative, got {delay!r}")
        self.delay = float(delay)
        self._times: List[float] = [float(t0)]
        self._values: List[float] = [float(initial)]

    def __len__(self) -> int:
        return len(self._times)

    def push(self, t: float, value: float) -> None:
        if t < self._times[-1]:
            raise ValidationError(f"delay buffer timestamps must be monotone ({t} < {self._times[-1]})")
        if t == self._times[-1]:
            self._values[-1] = float(value)
        else:
            self._times.append(float(t))
            self._values.append(float(value))
        self._prune(t)

    def _prune(self, t: float) -> None:
        keep_from = bisect.bisect_right(self._times, t - self.delay) - 1
        if keep_from > 1024:
            del self._times[:keep_from]
            del self._values[:keep_from]

    def delayed(self, t: float, current: float) -> float:
        if self.delay == 0:
            return current
        target = t - self.delay
        times, values = self._times, self._values
        if target <= times[0]:
            return values[0]
        last_t, last_v = times[-1], values[-1]
        if target >= last_t:
            if t <= last_t:
                return last_v
            frac = (target - last_t) / (t - last_t)
            return last_v + frac * (current - last_v)
        i = bisect.bisect_right(times, target)
        t_a, t_b = times[i - 1], times[i]
        frac = (target - t_a) / (t_b - t_a)
        return values[i - 1] + frac * (values[i] - values[i - 1])


class Governor:
    """Common surface of the four governor models, operating on state arrays."""

    kind: GovernorKind
    state_fields: Tuple[str, ...] = ()

    def __init__(self, params):
        self.params = params

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.params!r})"

    @property
    def n_states(self) -> int:
        return len(self.state_fields)

    @property
    def delay(self) -> float:
        return 0.0

    def validate(self) -> List[str]:
        return []

    def check(self) -> "Governor":
        violations = self.validate()
        if violations:
            raise ValidationError(f"invalid {self.kind.value} governor parameters", violations)
        return self

    def derivatives(self, x: np.ndarray, omega: float, omega_ref: float) -> np.ndarray:
        raise NotImplementedError

    def delay_input(self, x: np.ndarray) -> float:
        """Signal fed through the engine delay."""
        return 0.0

    def power(self, x: np.ndarray, omega: float, delayed: float) -> float:
        raise NotImplementedError

    def steady_state(self, p_m: float, omega: float = 1.0) -> np.ndarray:
        raise NotImplementedError

    def project(self, x: np.ndarray) -> np.ndarray:
        return x

    def new_delay_buffer(self, x: np.ndarray, t0: float = 0.0) -> DelayBuffer:
        return DelayBuffer(self.delay, self.delay_input(x), t0)


class SimpleGovernor(Governor):
    kind = GovernorKind.SIMPLE
    state_fields = ("speed_integrator", "m_b")

    def validate(self) -> List[str]:
        p = self.params
        violations = []
        if not p.T_sm > 0:
            violations.append("T_sm must be positive")
        if p.tau_d < 0:
            violations.append("tau_d must not be negative")
        if p.C == 0 or p.C_2 == 0:
            violations.append("C and C_2 must be non-zero")
        if p.K_1 == 0:
            violations.append("K_1 must be non-zero")
        return violations

    @property
    def delay(self) -> float:
        return self.params.tau_d

    def derivatives(self, x, omega, omega_ref):
        p = self.params
        z, m_b = x
        d_omega = omega - omega_ref
        return np.array(
            [
                p.K_i / omega_ref * d_omega,
                (-p.K_1 * z - p.K_1 * p.K_p / omega_ref * d_omega - m_b) / p.T_sm,
            ]
        )

    def delay_input(self, x):
        return float(x[1])

    def power(self, x, omega, delayed):
        p = self.params
        p_i = p.C * delayed
        p_f = p.C_3 * omega
        return p.C_2 * omega * (p_i - p_f)

    def steady_state(self, p_m, omega=1.0):
        p = self.params
        m_b = (p_m / (p.C_2 * omega) + p.C_3 * omega) / p.C
        return np.array([-m_b / p.K_1, m_b])


class DegovGovernor(Governor):
    kind = GovernorKind.DEGOV
    state_fields = ("lag_1", "lag_2", "actuator_1", "actuator_2", "actuator_out")

    def validate(self) -> List[str]:
        p = self.params
        violations = [f"{name} must be positive" for name in ("T_1", "T_2", "T_5", "T_6") if not getattr(p, name) > 0]
        violations += [f"{name} must not be negative" for name in ("T_3", "T_4", "T_D") if getattr(p, name) < 0]
        return violations

    @property
    def delay(self) -> float:
        return self.params.T_D

    def derivatives(self, x, omega, omega_ref):
        p = self.params
        x1, x2, x3, x4, _ = x
        u = omega_ref - omega
        y1 = x2 + p.T_3 * (x1 - x2) / p.T_2
        y4 = x4 + p.T_4 * (x3 - x4) / p.T_6
        return np.array(
            [
                (u - x1) / p.T_1,
                (x1 - x2) / p.T_2,
                (p.K * y1 - x3) / p.T_5,
                (x3 - x4) / p.T_6,
                y4,
            ]
        )

    def delay_input(self, x):
        return float(x[4])

    def power(self, x, omega, delayed):
        return delayed * omega

    def steady_state(self, p_m, omega=1.0):
        return np.array([0.0, 0.0, 0.0, 0.0, p_m / omega])


class _ValveGovernor(Governor):
    """Shared engine block and valve handling of GGOV1 and GGOV1D."""

    valve_index: int = 0

    def validate(self) -> List[str]:
        p = self.params
        violations = []
        if p.mode != "isochronous":
            violations.append(f"mode {p.mode!r} is not supported, only isochronous speed control")
        if not p.minerr < 0 < p.maxerr:
            violations.append(f"speed error limits need minerr < 0 < maxerr (got {p.minerr:g}, {p.maxerr:g})")
        if not p.valve_close < 0 < p.valve_open:
            violations.append(
                f"valve rate limits need valve_close < 0 < valve_open (got {p.valve_close:g}, {p.valve_open:g})"
            )
        if not 0.35 <= p.K_turb <= 0.4:
            violations.append(f"K_turb {p.K_turb:g} outside [0.35, 0.4]")
        if not 0.1 <= p.w_fnl <= 0.14:
            violations.append(f"w_fnl {p.w_fnl:g} outside [0.1, 0.14]")
        if not p.T_b > 0:
            violations.append("T_b must be positive")
        if p.T_c < 0:
            violations.append("T_c must not be negative")
        if not p.vmin < p.vmax:
            violations.append("vmin must be below vmax")
        if not p.trate > 0:
            violations.append("trate must be positive")
        return violations

    def speed_error(self, omega: float, omega_ref: float) -> float:
        p = self.params
        return min(max(omega_ref - omega, p.minerr), p.maxerr)

    def _valve_rate(self, valve: float, rate: float) -> float:
        p = self.params
        rate = min(max(rate, p.valve_close), p.valve_open)
        if (valve >= p.vmax and rate > 0) or (valve <= p.vmin and rate < 0):
            return 0.0
        return rate

    def _engine(self, valve: float, xe: float) -> Tuple[float, float]:
        """Return ``(dxe/dt, P_m)`` for the given valve position."""

        p = self.params
        fuel = min(max(valve, p.vmin), p.vmax)
        z = p.trate * p.K_turb * (fuel - p.w_fnl)
        return (z - xe) / p.T_b, xe + p.T_c * (z - xe) / p.T_b

    def fuel_for_power(self, p_m: float) -> float:
        p = self.params
        fuel = p_m / (p.trate * p.K_turb) + p.w_fnl
        if not p.vmin <= fuel <= p.vmax:
            raise ValidationError(
                "load beyond engine capability",
                [f"fuel {fuel:.4f} pu outside [{p.vmin:g}, {p.vmax:g}] for P_m={p_m:.4f} pu"],
            )
        return fuel

    def fuel(self, x: np.ndarray) -> float:
        p = self.params
        return min(max(float(x[self.valve_index]), p.vmin), p.vmax)

    def power(self, x, omega, delayed):
        return self._engine(x[self.valve_index], x[-1])[1]

    def project(self, x):
        p = self.params
        x = np.array(x, dtype=float)
        x[self.valve_index] = min(max(x[self.valve_index], p.vmin), p.vmax)
        return x


class Ggov1Governor(_ValveGovernor):
    kind = GovernorKind.GGOV1
    state_fields = ("pid_integrator", "derivative_filter", "valve", "engine_lag")
    valve_index = 2

    def validate(self) -> List[str]:
        violations = super().validate()
        if not self.params.T_act > 0:
            violations.append("T_act must be positive")
        return violations

    def derivatives(self, x, omega, omega_ref):
        p = self.params
        xi, xf, valve, xe = x
        u = self.speed_error(omega, omega_ref)
        if p.N_d > 0 and p.K_d != 0:
            d_term = p.K_d * p.N_d * (u - xf)
            d_xf = p.N_d * (u - xf)
        else:
            d_term = 0.0
            d_xf = 0.0
        command = p.K_p * u + xi + d_term
        d_valve = self._valve_rate(valve, (command - valve) / p.T_act)
        d_xi = p.K_i * u
        if (valve >= p.vmax and d_xi > 0) or (valve <= p.vmin and d_xi < 0):
            d_xi = 0.0
        d_xe, _ = self._engine(valve, xe)
        return np.array([d_xi, d_xf, d_valve, d_xe])

    def steady_state(self, p_m, omega=1.0):
        fuel = self.fuel_for_power(p_m)
        return np.array([fuel, 0.0, fuel, p_m])


class Ggov1dGovernor(_ValveGovernor):
    kind = GovernorKind.GGOV1D
    state_fields = ("lag_1", "lag_2", "actuator_1", "actuator_2", "valve", "engine_lag")
    valve_index = 4

    def validate(self) -> List[str]:
        p = self.params
        violations = super().validate()
        violations += [f"{name} must be positive" for name in ("T_1", "T_2", "T_5", "T_6") if not getattr(p, name) > 0]
        violations += [f"{name} must not be negative" for name in ("T_3", "T_4") if getattr(p, name) < 0]
        return violations

    def derivatives(self, x, omega, omega_ref):
        p = self.params
        x1, x2, x3, x4, valve, xe = x
        u = self.speed_error(omega, omega_ref)
        y1 = x2 + p.T_3 * (x1 - x2) / p.T_2
        y4 = x4 + p.T_4 * (x3 - x4) / p.T_6
        d_xe, _ = self._engine(valve, xe)
        return np.array(
            [
                (u - x1) / p.T_1,
                (x1 - x2) / p.T_2,
                (p.K * y1 - x3) / p.T_5,
                (x3 - x4) / p.T_6,
                self._valve_rate(valve, y4),
                d_xe,
            ]
        )

    def steady_state(self, p_m, omega=1.0):
        fuel = self.fuel_for_power(p_m)
        return np.array([0.0, 0.0, 0.0, 0.0, fuel, p_m])


GOVERNORS: Dict[GovernorKind, Type[Governor]] = {
    GovernorKind.SIMPLE: SimpleGovernor,
    GovernorKind.DEGOV: DegovGovernor,
    GovernorKind.GGOV1: Ggov1Governor,
    GovernorKind.GGOV1D: Ggov1dGovernor,
}

GOVERNOR_PARAMS: Dict[GovernorKind, type] = {
    GovernorKind.SIMPLE: SimpleGovParams,
    GovernorKind.DEGOV: DegovParams,
    GovernorKind.GGOV1: Ggov1Params,
    GovernorKind.GGOV1D: Ggov1dParams,
}


def make_governor(kind, params) -> Governor:
    kind = GovernorKind.parse(kind)
    expected = GOVERNOR_PARAMS[kind]
    if not isinstance(params, expected):
        raise ValidationError(f"{kind.value} governor needs {expected.__name__}, got {type(params).__name__}")
    return GOVERNORS[kind](params).check()


def governor_step(
    governor: Governor,
    state: np.ndarray,
    omega: float,
    omega_ref: float,
    dt: float,
    buffer: Optional[DelayBuffer] = None,
    t: float = 0.0,
) -> Tuple[np.ndarray, float]:
    """Advance one governor by ``dt`` with the speed held constant.

    Without a ``buffer`` the engine delay is bypassed.
    """

    def rhs(_t, x):
        return governor.derivatives(x, omega, omega_ref)

    new_state = governor.project(rk4_step(rhs, t, np.asarray(state, dtype=float), dt))
    current = governor.delay_input(new_state)
    if buffer is not None:
        buffer.push(t + dt, current)
        delayed = buffer.delayed(t + dt, current)
    else:
        delayed = current
    return new_state, governor.power(new_state, omega, delayed)


def simple_gov_step(state, omega, omega_ref, p: SimpleGovParams, dt, buffer=None, t=0.0):
    return governor_step(make_governor(GovernorKind.SIMPLE, p), state, omega, omega_ref, dt, buffer, t)


def degov_step(state, omega, omega_ref, p: DegovParams, dt, buffer=None, t=0.0):
    return governor_step(make_governor(GovernorKind.DEGOV, p), state, omega, omega_ref, dt, buffer, t)


def ggov1_step(state, omega, omega_ref, p: Ggov1Params, dt, buffer=None, t=0.0):
    return governor_step(make_governor(GovernorKind.GGOV1, p), state, omega, omega_ref, dt, buffer, t)


def ggov1d_step(state, omega, omega_ref, p: Ggov1dParams, dt, buffer=None, t=0.0):
    return governor_step(make_governor(GovernorKind.GGOV1D, p), state, omega, omega_ref, dt, buffer, t)


def estimate_fuel_curve(
    points: Sequence[Tuple[float, float]],
    base: PerUnitBase,
    power_base: Optional[float] = None,
    trate: float = 1.0,
) -> Tuple[float, float]:
    """Fit ``fuel = w_fnl + P / K_turb`` to ``(kW, L/h)`` points.

    Power is put on ``power_base`` (W) and fuel on ``base.fuel_base``. The
    power base defaults to ``trate * base.s_base``, the base on which the
    valve governors apply ``K_turb``. Returns ``(K_turb, w_fnl)``.
    """

    data = np.asarray(points, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValidationError("fuel curve points must be (power kW, fuel L/h) pairs")
    if not trate > 0:
        raise ValidationError(f"turbine rating must be positive, got {trate:g}")
    power_base = trate * base.s_base if power_base is None else float(power_base)
    p_pu = data[:, 0] * 1e3 / power_base
    fuel_pu = data[:, 1] / base.fuel_base
    if np.unique(p_pu).size < 2:
        raise ValidationError("fuel curve fit needs at least two distinct power points")

    design = np.column_stack([np.ones_like(p_pu), p_pu])
    (w_fnl, slope), *_ = np.linalg.lstsq(design, fuel_pu, rcond=None)
    if not slope > 0:
        raise ValidationError(f"fuel consumption must rise with power, fitted slope {slope:.4g}")
    logger.info("fuel curve fit over %d points: K_turb=%.4f w_fnl=%.4f", len(p_pu), 1.0 / slope, w_fnl)
    return float(1.0 / slope), float(w_fnl)
