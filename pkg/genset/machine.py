"""Sixth-order dq synchronous machine in per-unit, generator convention."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import List, NamedTuple, Tuple

import numpy as np

from .core import DegenerateParametersError, ValidationError

logger = logging.getLogger(__name__)

OMEGA_BASE_60 = 2.0 * math.pi * 60.0

# Array layout shared by every integrator that carries a machine state.
STATE_FIELDS = ("psi_d", "psi_kd", "psi_fd", "psi_q", "psi_kq1", "psi_kq2", "omega", "delta")
N_STATES = len(STATE_FIELDS)


@dataclass(frozen=True)
class MachineParams:
    Lmd: float
    Lmq: float
    Ll: float
    Llfd: float
    Llkd: float
    Lf1d: float
    Lkq1: float
    Lkq2: float
    Rs: float
    Rfd: float
    Rkd: float
    Rkq1: float
    Rkq2: float
    H: float
    D: float = 0.0

    def validate(self) -> List[str]:
        violations = []
        for name in ("Lmd", "Lmq", "Ll", "Llfd", "Llkd", "Lkq1", "Lkq2", "Rs", "Rfd", "Rkd", "Rkq1", "Rkq2"):
            if not getattr(self, name) > 0:
                violations.append(f"{name} must be positive")
        if self.Lf1d < 0:
            violations.append("Lf1d must not be negative")
        if not 0.3 <= self.H <= 0.8:
            violations.append(f"H {self.H:g} outside [0.3, 0.8]")
        if self.D < 0:
            violations.append("D must not be negative")
        for label, matrix in (("d-axis", self.d_matrix), ("q-axis", self.q_matrix)):
            try:
                np.linalg.cholesky(matrix)
            except np.linalg.LinAlgError:
                violations.append(f"{label} inductance matrix is not positive definite")
        return violations

    def check(self) -> "MachineParams":
        violations = self.validate()
        if violations:
            raise ValidationError("invalid machine parameters", violations)
        return self

    @cached_property
    def d_matrix(self) -> np.ndarray:
        lmd, lf1d = self.Lmd, self.Lf1d
        return np.array(
            [
                [lmd + self.Ll, lmd, lmd],
                [lmd, self.Llkd + lf1d + lmd, lf1d + lmd],
                [lmd, lf1d + lmd, self.Llfd + lf1d + lmd],
            ]
        )

    @cached_property
    def q_matrix(self) -> np.ndarray:
        lmq = self.Lmq
        return np.array(
            [
                [lmq + self.Ll, lmq, lmq],
                [lmq, lmq + self.Lkq1, lmq],
                [lmq, lmq, lmq + self.Lkq2],
            ]
        )

    @cached_property
    def d_inverse(self) -> np.ndarray:
        return _invert(self.d_matrix, "d-axis")

    @cached_property
    def q_inverse(self) -> np.ndarray:
        return _invert(self.q_matrix, "q-axis")

    @property
    def Ld(self) -> float:
        return self.Lmd + self.Ll

    @property
    def Lq(self) -> float:
        return self.Lmq + self.Ll

    def with_series_load(self, r: float, x: float) -> "MachineParams":
        """Fold a series R-L branch into the stator loop."""
        return dataclasses.replace(self, Rs=self.Rs + r, Ll=self.Ll + x)


def _invert(matrix: np.ndarray, label: str) -> np.ndarray:
    if np.linalg.cond(matrix) > 1e12:
        raise DegenerateParametersError(f"{label} inductance matrix is singular")
    return np.linalg.inv(matrix)


@dataclass(frozen=True)
class MachineState:
    psi_d: float = 0.0
    psi_kd: float = 0.0
    psi_fd: float = 0.0
    psi_q: float = 0.0
    psi_kq1: float = 0.0
    psi_kq2: float = 0.0
    omega: float = 1.0
    delta: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in STATE_FIELDS], dtype=float)

    @classmethod
    def from_array(cls, y: np.ndarray) -> "MachineState":
        return cls(*(float(v) for v in y[:N_STATES]))


class MachineCurrents(NamedTuple):
    i_d: float
    i_q: float
    i_fd: float
    i_kd: float
    i_kq1: float
    i_kq2: float


def _currents(y: np.ndarray, p: MachineParams) -> Tuple[np.ndarray, np.ndarray]:
    # d vector is (-i_d, i_kd, i_fd), q vector is (-i_q, i_kq1, i_kq2)
    return p.d_inverse @ y[0:3], p.q_inverse @ y[3:6]


def flux_to_currents(state: MachineState, p: MachineParams) -> MachineCurrents:
    cd, cq = _currents(state.to_array(), p)
    return MachineCurrents(
        i_d=-cd[0], i_q=-cq[0], i_fd=cd[2], i_kd=cd[1], i_kq1=cq[1], i_kq2=cq[2]
    )


def currents_to_flux(
    currents: MachineCurrents,
    p: MachineParams,
    omega: float = 1.0,
    delta: float = 0.0,
) -> MachineState:
    cd = np.array([-currents.i_d, currents.i_kd, currents.i_fd])
    cq = np.array([-currents.i_q, currents.i_kq1, currents.i_kq2])
    psi_d, psi_kd, psi_fd = p.d_matrix @ cd
    psi_q, psi_kq1, psi_kq2 = p.q_matrix @ cq
    return MachineState(psi_d, psi_kd, psi_fd, psi_q, psi_kq1, psi_kq2, omega, delta)


def electrical_torque(state: MachineState, currents: MachineCurrents) -> float:
    return state.psi_d * currents.i_q - state.psi_q * currents.i_d


def field_voltage(efd: float, p: MachineParams) -> float:
    """Field voltage for an exciter output, 1 pu efd giving 1 pu open-circuit voltage."""
    return efd * p.Rfd / p.Lmd


def machine_rhs(
    y: np.ndarray,
    v_d: float,
    v_q: float,
    v_fd: float,
    t_m: float,
    p: MachineParams,
    omega_base: float = OMEGA_BASE_60,
) -> np.ndarray:
    cd, cq = _currents(y, p)
    i_d, i_kd, i_fd = -cd[0], cd[1], cd[2]
    i_q, i_kq1, i_kq2 = -cq[0], cq[1], cq[2]
    psi_d, psi_q, omega = y[0], y[3], y[6]
    t_e = psi_d * i_q - psi_q * i_d
    return np.array(
        [
            omega_base * (v_d + p.Rs * i_d + omega * psi_q),
            -omega_base * p.Rkd * i_kd,
            omega_base * (v_fd - p.Rfd * i_fd),
            omega_base * (v_q + p.Rs * i_q - omega * psi_d),
            -omega_base * p.Rkq1 * i_kq1,
            -omega_base * p.Rkq2 * i_kq2,
            (t_m - t_e - p.D * (omega - 1.0)) / (2.0 * p.H),
            omega_base * (omega - 1.0),
        ]
    )


def machine_derivatives(
    state: MachineState,
    v_d: float,
    v_q: float,
    v_fd: float,
    t_m: float,
    p: MachineParams,
    omega_base: float = OMEGA_BASE_60,
) -> MachineState:
    """Time derivatives of every machine state, returned in a ``MachineState``."""

    return MachineState.from_array(machine_rhs(state.to_array(), v_d, v_q, v_fd, t_m, p, omega_base))


def machine_jacobian(
    state: MachineState,
    p: MachineParams,
    omega_base: float = OMEGA_BASE_60,
) -> np.ndarray:
    """Analytic Jacobian of ``machine_rhs`` w.r.t. the state, inputs held fixed.

    Rows and columns follow ``STATE_FIELDS``.
    """

    y = state.to_array()
    ad, aq = p.d_inverse, p.q_inverse
    cd, cq = _currents(y, p)
    i_d, i_q = -cd[0], -cq[0]
    psi_d, psi_q, omega = y[0], y[3], y[6]

    jac = np.zeros((N_STATES, N_STATES))
    jac[0, 0:3] = -omega_base * p.Rs * ad[0]
    jac[0, 3] += omega_base * omega
    jac[0, 6] = omega_base * psi_q
    jac[1, 0:3] = -omega_base * p.Rkd * ad[1]
    jac[2, 0:3] = -omega_base * p.Rfd * ad[2]
    jac[3, 3:6] = -omega_base * p.Rs * aq[0]
    jac[3, 0] += -omega_base * omega
    jac[3, 6] = -omega_base * psi_d
    jac[4, 3:6] = -omega_base * p.Rkq1 * aq[1]
    jac[5, 3:6] = -omega_base * p.Rkq2 * aq[2]

    dte_dd = psi_q * ad[0]
    dte_dd[0] += i_q
    dte_dq = -psi_d * aq[0]
    dte_dq[0] -= i_d
    jac[6, 0:3] = -dte_dd / (2.0 * p.H)
    jac[6, 3:6] = -dte_dq / (2.0 * p.H)
    jac[6, 6] = -p.D / (2.0 * p.H)
    jac[7, 6] = omega_base
    return jac


def stored_energy(state: MachineState, p: MachineParams, omega_base: float = OMEGA_BASE_60) -> float:
    """Magnetic energy of all windings plus rotor kinetic energy, in pu seconds."""

    y = state.to_array()
    cd, cq = _currents(y, p)
    magnetic = 0.5 * (cd @ y[0:3] + cq @ y[3:6])
    return magnetic / omega_base + p.H * state.omega ** 2


def open_circuit_rhs(
    y: np.ndarray,
    v_fd: float,
    t_m: float,
    p: MachineParams,
    omega_base: float = OMEGA_BASE_60,
) -> Tuple[np.ndarray, float, float]:
    """Derivatives with the stator open, plus the resulting terminal voltages.

    Stator currents are held at zero, so the stator fluxes follow the rotor
    fluxes algebraically.
    """

    rotor_d = p.d_matrix[1:, 1:]
    rotor_q = p.q_matrix[1:, 1:]
    i_kd, i_fd = np.linalg.solve(rotor_d, y[1:3])
    i_kq1, i_kq2 = np.linalg.solve(rotor_q, y[4:6])
    omega = y[6]

    d_rotor_d = np.array([-omega_base * p.Rkd * i_kd, omega_base * (v_fd - p.Rfd * i_fd)])
    d_rotor_q = np.array([-omega_base * p.Rkq1 * i_kq1, -omega_base * p.Rkq2 * i_kq2])
    couple_d = p.d_matrix[0, 1:] @ np.linalg.inv(rotor_d)
    couple_q = p.q_matrix[0, 1:] @ np.linalg.inv(rotor_q)
    psi_d = couple_d @ y[1:3]
    psi_q = couple_q @ y[4:6]
    d_psi_d = couple_d @ d_rotor_d
    d_psi_q = couple_q @ d_rotor_q

    dy = np.array(
        [
            d_psi_d,
            d_rotor_d[0],
            d_rotor_d[1],
            d_psi_q,
            d_rotor_q[0],
            d_rotor_q[1],
            (t_m - p.D * (omega - 1.0)) / (2.0 * p.H),
            omega_base * (omega - 1.0),
        ]
    )
    v_d = -omega * psi_q + d_psi_d / omega_base
    v_q = omega * psi_d + d_psi_q / omega_base
    return dy, v_d, v_q


def open_circuit_stator_flux(y: np.ndarray, p: MachineParams) -> np.ndarray:
    """Return ``y`` with the stator fluxes replaced by their zero-current values."""

    out = np.array(y, dtype=float)
    out[0] = p.d_matrix[0, 1:] @ np.linalg.solve(p.d_matrix[1:, 1:], y[1:3])
    out[3] = p.q_matrix[0, 1:] @ np.linalg.solve(p.q_matrix[1:, 1:], y[4:6])
    return out
