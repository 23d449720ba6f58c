"""Measurement pipeline for three-phase waveforms and the fitting metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import integrate
from scipy import signal as sps

from .core import TimeSeries, ValidationError

logger = logging.getLogger(__name__)

RAW_CHANNELS = ("van", "vbn", "vcn", "ia", "ib", "ic")
DERIVED_CHANNELS = ("P", "Q", "V", "f")

_A = np.exp(2j * math.pi / 3)


@dataclass(frozen=True)
class ThreePhaseFrame:
    t0: float
    dt: float
    van: np.ndarray
    vbn: np.ndarray
    vcn: np.ndarray
    ia: np.ndarray
    ib: np.ndarray
    ic: np.ndarray

    @classmethod
    def from_series(cls, series: TimeSeries) -> "ThreePhaseFrame":
        missing = [name for name in RAW_CHANNELS if name not in series]
        if missing:
            raise ValidationError("raw waveform data is missing channels", missing)
        arrays = {name: np.asarray(series[name], dtype=float) for name in RAW_CHANNELS}
        bad = [name for name, arr in arrays.items() if not np.isfinite(arr).all()]
        if bad:
            raise ValidationError("raw waveform channels contain non-finite samples", bad)
        return cls(series.t0, series.dt, **arrays)

    @property
    def n(self) -> int:
        return self.van.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) * self.dt

    @property
    def voltages(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.van, self.vbn, self.vcn

    @property
    def currents(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.ia, self.ib, self.ic


def _fundamental_phasor(x: np.ndarray, t: np.ndarray, omega: float) -> complex:
    design = np.column_stack([np.cos(omega * t), np.sin(omega * t)])
    (a, b), *_ = np.linalg.lstsq(design, x, rcond=None)
    return complex(a, -b)


def symmetrical_positive(xa, xb, xc):
    return (xa + _A * xb + _A * _A * xc) / 3.0


def positive_sequence(frame: ThreePhaseFrame, freq: float = 60.0) -> Tuple[complex, complex]:
    """Positive-sequence peak phasors of voltage and current over the whole frame.

    Each phase's fundamental is fitted by least squares at ``freq``; phases
    are referenced to ``cos(2*pi*freq*t)``.
    """

    if not freq > 0:
        raise ValidationError(f"frequency must be positive, got {freq!r}")
    if frame.n * frame.dt < 1.0 / freq - 1e-12:
        raise ValidationError(
            "window shorter than one fundamental cycle", [f"{frame.n * frame.dt:.6f} s < {1.0 / freq:.6f} s"]
        )
    omega = 2.0 * math.pi * freq
    t = frame.t
    v = [_fundamental_phasor(x, t, omega) for x in frame.voltages]
    i = [_fundamental_phasor(x, t, omega) for x in frame.currents]
    return symmetrical_positive(*v), symmetrical_positive(*i)


def compute_pq(v1, i1):
    """Three-phase active and reactive power from positive-sequence peak phasors."""

    s = 1.5 * np.asarray(v1) * np.conj(np.asarray(i1))
    if np.ndim(s):
        return s.real, s.imag
    return float(s.real), float(s.imag)


def _sliding_mean(values: np.ndarray, dt: float, period: np.ndarray) -> np.ndarray:
    """Mean of ``values`` over the trailing ``period`` seconds at every sample."""

    n = values.shape[0]
    t = np.arange(n) * dt
    cumulative = integrate.cumulative_trapezoid(values, dx=dt, initial=0)
    start = t - period
    out = (cumulative - np.interp(start, t, cumulative)) / period
    warm = start < -1e-12
    if np.iscomplexobj(out):
        out[warm] = complex(np.nan, np.nan)
    else:
        out[warm] = np.nan
    return out


def rms_voltage(samples: np.ndarray, dt: float, freq_est) -> np.ndarray:
    """RMS over one estimated fundamental period; warm-up samples are NaN."""

    freq = np.broadcast_to(np.asarray(freq_est, dtype=float), np.shape(samples))
    if not (freq > 0).all():
        raise ValidationError("RMS window needs a positive frequency estimate")
    mean_square = _sliding_mean(np.asarray(samples, dtype=float) ** 2, dt, 1.0 / freq)
    return np.sqrt(np.maximum(mean_square, 0.0), where=~np.isnan(mean_square), out=np.full_like(mean_square, np.nan))


@dataclass(frozen=True)
class PllParams:
    f_nominal: float = 60.0
    bandwidth_hz: float = 20.0
    damping: float = 0.707
    lock_range: float = 0.5

    @property
    def kp(self) -> float:
        return 2.0 * self.damping * 2.0 * math.pi * self.bandwidth_hz

    @property
    def ki(self) -> float:
        return (2.0 * math.pi * self.bandwidth_hz) ** 2


@dataclass(frozen=True)
class PllState:
    theta: float
    omega_est: float
    integrator: float = 0.0


@dataclass(frozen=True)
class PllResult:
    freq: np.ndarray
    theta: np.ndarray
    locked: bool
    lost_at: Optional[float] = None


def clarke(va, vb, vc):
    alpha = (2.0 / 3.0) * (va - 0.5 * vb - 0.5 * vc)
    beta = (1.0 / math.sqrt(3.0)) * (vb - vc)
    return alpha, beta


def pll_start(va: float, vb: float, vc: float, params: PllParams) -> PllState:
    alpha, beta = clarke(va, vb, vc)
    return PllState(theta=math.atan2(beta, alpha), omega_est=2.0 * math.pi * params.f_nominal)


def pll_step(state: PllState, va: float, vb: float, vc: float, dt: float, params: PllParams) -> PllState:
    """One forward-Euler update of the synchronous-reference-frame PLL."""

    alpha, beta = clarke(va, vb, vc)
    amplitude = math.hypot(alpha, beta)
    # q-axis component normalized by amplitude, sin of the phase error
    error = 0.0 if amplitude < 1e-12 else (beta * math.cos(state.theta) - alpha * math.sin(state.theta)) / amplitude
    omega_nom = 2.0 * math.pi * params.f_nominal
    omega = omega_nom + params.kp * error + state.integrator
    return PllState(
        theta=state.theta + omega * dt,
        omega_est=omega,
        integrator=state.integrator + params.ki * error * dt,
    )


def pll_frequency(frame: ThreePhaseFrame, params: PllParams = PllParams()) -> PllResult:
    n = frame.n
    freq = np.empty(n)
    theta = np.empty(n)
    omega_nom = 2.0 * math.pi * params.f_nominal
    lo, hi = (1.0 - params.lock_range) * omega_nom, (1.0 + params.lock_range) * omega_nom
    alpha, beta = clarke(*frame.voltages)
    amplitude = np.hypot(alpha, beta)

    # same update as pll_step, unrolled over plain floats
    state = pll_start(frame.van[0], frame.vbn[0], frame.vcn[0], params)
    th, integ = state.theta, 0.0
    kp, ki, dt = params.kp, params.ki, frame.dt
    lost_at = None
    for k in range(n):
        amp = amplitude[k]
        err = 0.0 if amp < 1e-12 else (beta[k] * math.cos(th) - alpha[k] * math.sin(th)) / amp
        omega = omega_nom + kp * err + integ
        theta[k] = th
        freq[k] = omega / (2.0 * math.pi)
        if lost_at is None and not lo <= omega <= hi:
            lost_at = frame.t0 + k * dt
        th += omega * dt
        integ += ki * err * dt

    if lost_at is not None:
        logger.warning("PLL lost lock at t=%.6f s", lost_at)
    return PllResult(freq=freq, theta=theta, locked=lost_at is None, lost_at=lost_at)


def streaming_phasor(samples: np.ndarray, theta: np.ndarray, dt: float, freq: np.ndarray) -> np.ndarray:
    """Peak phasor of ``samples`` in the frame rotating with ``theta``."""

    return 2.0 * _sliding_mean(np.asarray(samples, dtype=float) * np.exp(-1j * theta), dt, 1.0 / freq)


def lowpass(samples: np.ndarray, dt: float, cutoff_hz: float, order: int = 4) -> np.ndarray:
    nyquist = 0.5 / dt
    if not 0 < cutoff_hz < nyquist:
        raise ValidationError(f"low-pass cutoff {cutoff_hz!r} Hz outside (0, {nyquist:g})")
    sos = sps.butter(order, cutoff_hz, fs=1.0 / dt, output="sos")
    return sps.sosfiltfilt(sos, samples)


def derive_channels(
    series: TimeSeries,
    pll: PllParams = PllParams(),
    lowpass_hz: Optional[float] = None,
    fill_warmup: bool = True,
) -> TimeSeries:
    """Turn raw ``van..ic`` waveforms into ``P`` (kW), ``Q`` (kVAR), ``V`` (V rms) and ``f`` (Hz)."""

    frame = ThreePhaseFrame.from_series(series)
    if lowpass_hz:
        frame = ThreePhaseFrame(
            frame.t0,
            frame.dt,
            *(lowpass(getattr(frame, name), frame.dt, lowpass_hz) for name in RAW_CHANNELS),
        )

    locked = pll_frequency(frame, pll)
    window_freq = np.clip(
        locked.freq, (1.0 - pll.lock_range) * pll.f_nominal, (1.0 + pll.lock_range) * pll.f_nominal
    )
    dt = frame.dt
    v_rms = np.mean([rms_voltage(x, dt, window_freq) for x in frame.voltages], axis=0)
    v1 = symmetrical_positive(*(streaming_phasor(x, locked.theta, dt, window_freq) for x in frame.voltages))
    i1 = symmetrical_positive(*(streaming_phasor(x, locked.theta, dt, window_freq) for x in frame.currents))
    p, q = compute_pq(v1, i1)

    channels = {"P": p / 1e3, "Q": q / 1e3, "V": v_rms, "f": locked.freq}
    if fill_warmup:
        channels = {k: pd.Series(v).bfill().to_numpy() for k, v in channels.items()}
    return TimeSeries(frame.t0, dt, channels)


def _pair(meas, sim) -> Tuple[np.ndarray, np.ndarray]:
    meas = np.asarray(meas, dtype=float)
    sim = np.asarray(sim, dtype=float)
    if meas.shape != sim.shape:
        raise ValidationError(f"series lengths differ ({meas.shape[0]} vs {sim.shape[0]})")
    if meas.size == 0:
        raise ValidationError("cannot score empty series")
    return meas, sim


def nrmse(meas, sim, norm: float) -> float:
    meas, sim = _pair(meas, sim)
    if not norm > 0:
        raise ValidationError(f"normalization factor must be positive, got {norm!r}")
    return float(np.sqrt(np.mean((meas - sim) ** 2)) / norm)


def mape(meas, sim) -> float:
    meas, sim = _pair(meas, sim)
    nonzero = meas != 0
    dropped = int(meas.size - nonzero.sum())
    if dropped == meas.size:
        raise ValidationError("MAPE undefined: every measured sample is zero")
    if dropped:
        logger.warning("MAPE excludes %d zero-valued measured samples", dropped)
    return float(100.0 * np.mean(np.abs(meas[nonzero] - sim[nonzero]) / np.abs(meas[nonzero])))


SeriesLike = Union[TimeSeries, Mapping[str, np.ndarray]]


def channel_nrmse(meas: SeriesLike, sim: SeriesLike, norms: Mapping[str, float]) -> Dict[str, float]:
    return {ch: nrmse(meas[ch], sim[ch], norms[ch]) for ch in DERIVED_CHANNELS}


def objective(
    meas: SeriesLike,
    sim: SeriesLike,
    weights: Sequence[float] = (1.0, 1.0, 1.0, 1.0),
    norms: Optional[Mapping[str, float]] = None,
) -> float:
    """Weighted sum of per-channel nRMSE over ``P``, ``Q``, ``V`` and ``f``."""

    if len(weights) != len(DERIVED_CHANNELS):
        raise ValidationError(f"expected {len(DERIVED_CHANNELS)} weights, got {len(weights)}")
    norms = norms or {ch: 1.0 for ch in DERIVED_CHANNELS}
    scores = channel_nrmse(meas, sim, norms)
    return float(sum(w * scores[ch] for w, ch in zip(weights, DERIVED_CHANNELS)))


def normalization_factors(
    meas: TimeSeries,
    t_step: float,
    method: str = "pre_step_mean",
) -> Dict[str, float]:
    """Per-channel nRMSE normalization.

    ``pre_step_mean`` falls back to the channel's peak magnitude when the
    pre-step mean is zero (a load bank with no reactive power, for instance).
    """

    factors = {}
    t = meas.t
    for ch in DERIVED_CHANNELS:
        x = np.asarray(meas[ch], dtype=float)
        if method == "pre_step_mean":
            before = x[t < t_step]
            value = abs(float(np.mean(before))) if before.size else 0.0
            if value <= 1e-9 * max(float(np.max(np.abs(x))), 1e-300):
                logger.info("channel %s has no pre-step level, normalizing by its peak", ch)
                value = float(np.max(np.abs(x)))
        elif method == "range":
            value = float(np.ptp(x))
        elif method == "max":
            value = float(np.max(np.abs(x)))
        else:
            raise ValidationError(f"unknown normalization method {method!r}", ["pre_step_mean", "range", "max"])
        if not value > 0:
            raise ValidationError(f"channel {ch} has a zero normalization factor under {method!r}")
        factors[ch] = value
    return factors


@dataclass(frozen=True)
class FrequencyMetrics:
    nadir: Optional[float]
    t_nadir: Optional[float]
    rocof: Optional[float]
    settling_time: Optional[float]
    rebound_end: Optional[float]
    steady_state: Dict[str, float]

    def as_dict(self) -> Dict[str, Optional[float]]:
        out: Dict[str, Optional[float]] = {
            "nadir_hz": self.nadir,
            "t_nadir_s": self.t_nadir,
            "rocof_hz_per_s": self.rocof,
            "settling_time_s": self.settling_time,
            "rebound_end_s": self.rebound_end,
        }
        out.update({f"steady_{k}": v for k, v in self.steady_state.items()})
        return out


def rebound_end(
    t: np.ndarray,
    f: np.ndarray,
    t_nadir: float,
    f_nominal: float = 60.0,
    recovery: float = 0.999,
) -> float:
    """First time after the nadir at which ``f`` recovers to ``recovery * f_nominal``."""

    after = (t >= t_nadir) & (f >= recovery * f_nominal)
    if not after.any():
        return float(t[-1])
    return float(t[int(np.argmax(after))])


def frequency_metrics(
    series: TimeSeries,
    t_step: float,
    f_nominal: float = 60.0,
    band_hz: float = 0.05,
    nadir_threshold_hz: float = 0.01,
    rocof_window: float = 0.1,
    recovery: float = 0.999,
    steady_window: float = 0.5,
    holdoff: float = 0.05,
) -> FrequencyMetrics:
    """Nadir, ROCOF, settling and steady-state values of a load-step record.

    The nadir and ROCOF searches skip the first ``holdoff`` seconds after the
    step, where the PLL still rings from the switching phase jump. Settling
    counts from the step itself.
    """

    if holdoff < 0:
        raise ValidationError(f"holdoff must not be negative, got {holdoff!r}")
    t = series.t
    f = np.asarray(series["f"], dtype=float)
    post = t >= t_step
    if not post.any():
        raise ValidationError(f"series ends before the step at {t_step:g} s")
    search = t >= t_step + holdoff
    if not search.any():
        search = post

    tail = t >= t[-1] - steady_window
    steady = {ch: float(np.mean(series[ch][tail])) for ch in series.channels}

    pre = f[~post]
    reference = float(np.mean(pre)) if pre.size else f_nominal
    k_min = int(np.argmin(np.where(search, f, np.inf)))
    if reference - f[k_min] < nadir_threshold_hz:
        return FrequencyMetrics(None, None, None, None, None, steady)

    t_nadir = float(t[k_min])
    lag = max(1, int(round(rocof_window / series.dt)))
    seg = f[search]
    rocof = None
    if seg.size > lag:
        rocof = float(np.max(np.abs(seg[lag:] - seg[:-lag])) / (lag * series.dt))

    outside = post & (np.abs(f - f_nominal) > band_hz)
    settling = float(t[np.nonzero(outside)[0][-1]] - t_step) if outside.any() else None
    return FrequencyMetrics(
        nadir=float(f[k_min]),
        t_nadir=t_nadir,
        rocof=rocof,
        settling_time=settling,
        rebound_end=rebound_end(t, f, t_nadir, f_nominal, recovery),
        steady_state=steady,
    )


def window_metrics(
    meas: TimeSeries,
    sim: TimeSeries,
    t_step: float,
    t_nadir_meas: Optional[float],
    t_rebound_end: float,
    channel: str = "f",
    norm: Optional[float] = None,
) -> Tuple[float, float]:
    """nRMSE and MAPE of one channel over the arresting and rebound window."""

    if not t_rebound_end > t_step:
        raise ValidationError(f"empty metric window [{t_step:g}, {t_rebound_end:g}]")
    if t_nadir_meas is not None and not t_step <= t_nadir_meas <= t_rebound_end:
        raise ValidationError(f"nadir at {t_nadir_meas:g} s lies outside [{t_step:g}, {t_rebound_end:g}]")
    m = meas.window(t_step, t_rebound_end)[channel]
    s = sim.window(t_step, t_rebound_end)[channel]
    if norm is None:
        norm = abs(float(np.mean(meas[channel])))
    return nrmse(m, s, norm), mape(m, s)


def resample(
    series: TimeSeries,
    target_dt: float,
    t_start: Optional[float] = None,
    t_end: Optional[float] = None,
) -> TimeSeries:
    """Linear interpolation onto a uniform grid inside the source span."""

    if not target_dt > 0:
        raise ValidationError(f"target step must be positive, got {target_dt!r}")
    t_start = series.t0 if t_start is None else float(t_start)
    t_end = series.t_end if t_end is None else float(t_end)
    tol = 1e-9 * series.dt
    if t_start < series.t0 - tol or t_end > series.t_end + tol:
        raise ValidationError(
            "resampling would extrapolate",
            [f"target [{t_start:g}, {t_end:g}] outside source [{series.t0:g}, {series.t_end:g}]"],
        )
    n = int(math.floor((t_end - t_start) / target_dt + 1e-9)) + 1
    grid = t_start + np.arange(n) * target_dt
    grid = np.minimum(grid, series.t_end)
    source_t = series.t
    return TimeSeries(
        t_start, target_dt, {name: np.interp(grid, source_t, samples) for name, samples in series.channels.items()}
    )


def align(meas: TimeSeries, sim: TimeSeries, dt: Optional[float] = None) -> Tuple[TimeSeries, TimeSeries]:
    """Put two series on one grid spanning their overlap, at the coarser step by default."""

    t_start = max(meas.t0, sim.t0)
    t_end = min(meas.t_end, sim.t_end)
    if not t_end > t_start:
        raise ValidationError("measured and simulated series do not overlap in time")
    dt = dt or max(meas.dt, sim.dt)
    return resample(meas, dt, t_start, t_end), resample(sim, dt, t_start, t_end)
