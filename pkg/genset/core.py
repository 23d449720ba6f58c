from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Type, TypeVar

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class GensetError(Exception):
    """Base class for every error raised by the genset library."""


class ValidationError(GensetError):
    def __init__(self, message: str, violations: Optional[Sequence[str]] = None):
        self.violations: List[str] = list(violations or [])
        if self.violations:
            message = f"{message}: {'; '.join(self.violations)}"
        super().__init__(message)


class NumericalError(GensetError):
    pass


class DegenerateParametersError(NumericalError):
    pass


class DegenerateSampleError(NumericalError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, message: str, last_valid_time: float):
        self.last_valid_time = last_valid_time
        super().__init__(f"{message} (last valid time {last_valid_time:.6f} s)")


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


@dataclass(frozen=True)
class PerUnitBase:
    s_base: float = 400e3
    v_base: float = 277.1
    f_base: float = 60.0
    fuel_base: float = 96.0

    def __post_init__(self):
        bad = [f.name for f in dataclasses.fields(self) if not getattr(self, f.name) > 0]
        if bad:
            raise ValidationError("per-unit bases must be strictly positive", bad)

    @property
    def i_base(self) -> float:
        return self.s_base / (3.0 * self.v_base)

    @property
    def z_base(self) -> float:
        return self.v_base / self.i_base

    @property
    def omega_base(self) -> float:
        return 2.0 * math.pi * self.f_base


_BASE_ATTRS = {
    "power": "s_base",
    "voltage": "v_base",
    "current": "i_base",
    "frequency": "f_base",
    "fuel": "fuel_base",
    "impedance": "z_base",
}

_CHANNEL_KINDS = {
    "P": "power",
    "Q": "power",
    "S": "power",
    "V": "voltage",
    "I": "current",
    "f": "frequency",
}


def _base_value(base: PerUnitBase, kind: str) -> float:
    resolved = _CHANNEL_KINDS.get(kind, kind)
    attr = _BASE_ATTRS.get(resolved)
    if attr is None:
        raise ValidationError(f"unknown channel kind {kind!r}")
    return getattr(base, attr)


def to_per_unit(value, base: PerUnitBase, kind: str):
    scale = _base_value(base, kind)
    if np.ndim(value):
        return np.asarray(value, dtype=float) / scale
    return float(value) / scale


def from_per_unit(value, base: PerUnitBase, kind: str):
    scale = _base_value(base, kind)
    if np.ndim(value):
        return np.asarray(value, dtype=float) * scale
    return float(value) * scale


@dataclass(frozen=True)
class ParameterEntry:
    name: str
    value: float
    lower: float
    upper: float

    @property
    def span(self) -> float:
        return self.upper - self.lower


class ParameterVector:
    """Ordered, named parameter set with box bounds."""

    def __init__(self, entries: Iterable[ParameterEntry]):
        self._entries: Tuple[ParameterEntry, ...] = tuple(entries)
        names = [e.name for e in self._entries]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValidationError("parameter names must be unique", duplicates)
        self._index = {e.name: i for i, e in enumerate(self._entries)}

    @classmethod
    def from_mapping(
        cls,
        values: Mapping[str, float],
        bounds: Mapping[str, Sequence[float]],
    ) -> "ParameterVector":
        entries = []
        for name, (lower, upper) in bounds.items():
            if name not in values:
                raise ValidationError(f"no value for bounded parameter {name!r}")
            entries.append(ParameterEntry(name, float(values[name]), float(lower), float(upper)))
        return cls(entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[ParameterEntry]:
        return iter(self._entries)

    def __getitem__(self, name: str) -> float:
        return self._entries[self._index[name]].value

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ParameterVector) and self._entries == other._entries

    def __repr__(self) -> str:
        inner = ", ".join(f"{e.name}={e.value:g}" for e in self._entries)
        return f"ParameterVector({inner})"

    @property
    def names(self) -> List[str]:
        return [e.name for e in self._entries]

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self._entries], dtype=float)

    @property
    def lower(self) -> np.ndarray:
        return np.array([e.lower for e in self._entries], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([e.upper for e in self._entries], dtype=float)

    def as_dict(self) -> Dict[str, float]:
        return {e.name: e.value for e in self._entries}

    def with_values(self, values: Sequence[float]) -> "ParameterVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self),):
            raise ValidationError(f"expected {len(self)} values, got shape {values.shape}")
        return ParameterVector(
            dataclasses.replace(e, value=float(v)) for e, v in zip(self._entries, values)
        )

    def subset(self, names: Iterable[str]) -> "ParameterVector":
        return ParameterVector(self._entries[self._index[n]] for n in names)

    def violations(self) -> List[str]:
        found = []
        for e in self._entries:
            if e.lower > e.upper:
                found.append(f"{e.name}: lower {e.lower:g} > upper {e.upper:g}")
            elif not e.lower <= e.value <= e.upper:
                found.append(f"{e.name}: {e.value:g} outside [{e.lower:g}, {e.upper:g}]")
        return found

    def to_unit(self, values: Optional[np.ndarray] = None) -> np.ndarray:
        values = self.values if values is None else np.asarray(values, dtype=float)
        span = self.upper - self.lower
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (values - self.lower) / safe, 0.0)

    def from_unit(self, unit: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(unit, dtype=float) * (self.upper - self.lower)


def clamp_to_bounds(vector: ParameterVector) -> ParameterVector:
    malformed = [f"{e.name}: lower {e.lower:g} > upper {e.upper:g}" for e in vector if e.lower > e.upper]
    if malformed:
        raise ValidationError("malformed parameter bounds", malformed)
    return vector.with_values(np.clip(vector.values, vector.lower, vector.upper))


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled channel set starting at ``t0`` with step ``dt``."""

    t0: float
    dt: float
    channels: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError(f"time step must be positive, got {self.dt!r}")
        frozen: Dict[str, np.ndarray] = {}
        lengths = set()
        for name, samples in self.channels.items():
            arr = np.array(samples, dtype=float)
            arr.setflags(write=False)
            frozen[name] = arr
            lengths.add(arr.shape[0])
        if len(lengths) > 1:
            raise ValidationError("all channels must have equal length", [f"lengths {sorted(lengths)}"])
        object.__setattr__(self, "channels", frozen)

    @property
    def n(self) -> int:
        return next(iter(self.channels.values())).shape[0] if self.channels else 0

    @property
    def t(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) * self.dt

    @property
    def t_end(self) -> float:
        return self.t0 + (self.n - 1) * self.dt

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise ValidationError(f"time series has no channel {name!r}") from None

    def __contains__(self, name: object) -> bool:
        return name in self.channels

    def with_channels(self, **extra: np.ndarray) -> "TimeSeries":
        return TimeSeries(self.t0, self.dt, {**self.channels, **extra})

    def select(self, names: Iterable[str]) -> "TimeSeries":
        return TimeSeries(self.t0, self.dt, {n: self[n] for n in names})

    def window(self, t_start: float, t_end: float) -> "TimeSeries":
        t = self.t
        tol = 1e-9 * self.dt
        mask = (t >= t_start - tol) & (t <= t_end + tol)
        if not mask.any():
            raise ValidationError(f"empty window [{t_start:g}, {t_end:g}]")
        first = int(np.argmax(mask))
        return TimeSeries(float(t[first]), self.dt, {k: v[mask] for k, v in self.channels.items()})

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.t})
        for name, samples in self.channels.items():
            frame[name] = samples
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, time_column: str = "t") -> "TimeSeries":
        t = frame[time_column].to_numpy(dtype=float)
        if t.shape[0] < 2:
            raise ValidationError("time series needs at least two samples")
        steps = np.diff(t)
        if not (steps > 0).all():
            raise ValidationError("time column must be strictly increasing")
        dt = (t[-1] - t[0]) / (t.shape[0] - 1)
        if np.max(np.abs(steps - dt)) > 1e-6 * dt:
            raise ValidationError("non-uniform sampling", [f"step deviation exceeds 1 ppm of {dt:.6g} s"])
        channels = {c: frame[c].to_numpy(dtype=float) for c in frame.columns if c != time_column}
        return cls(float(t[0]), float(dt), channels)


T = TypeVar("T")


def from_mapping(cls: Type[T], raw: Mapping[str, object], section: str) -> T:
    """Build a parameter dataclass, rejecting unknown and missing keys."""

    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ValidationError(f"unknown keys in section {section!r}", unknown)
    missing = sorted(
        name
        for name, f in known.items()
        if name not in raw
        and f.default is dataclasses.MISSING
        and f.default_factory is dataclasses.MISSING
    )
    if missing:
        raise ValidationError(f"missing keys in section {section!r}", missing)
    values = {}
    for name, value in raw.items():
        values[name] = value if isinstance(value, (bool, str)) or value is None else float(value)
    return cls(**values)


def rk4_step(
    fn: Callable[[float, np.ndarray], np.ndarray],
    t: float,
    y: np.ndarray,
    dt: float,
    k1: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Advance ``y`` by one classical fourth-order Runge-Kutta step.

    Parameters
    ----------
    fn : callable
        Right-hand side ``fn(t, y) -> dy/dt``.
    t : float
        Time at the start of the step.
    y : numpy.ndarray
        State at ``t``.
    dt : float
        Step size.
    k1 : numpy.ndarray, optional
        Slope at ``(t, y)`` when the caller already has it.
    """

    if k1 is None:
        k1 = fn(t, y)
    k2 = fn(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = fn(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = fn(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
