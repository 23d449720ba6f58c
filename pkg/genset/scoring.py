"""Model-versus-measurement scoring shared by the identify and compare commands."""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .core import TimeSeries, ValidationError
from .signal import (
    DERIVED_CHANNELS,
    FrequencyMetrics,
    align,
    channel_nrmse,
    frequency_metrics,
    normalization_factors,
    objective,
    window_metrics,
)
from .simengine import simulate
from . import util

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Fit:
    kind: str
    value: float
    channels: Dict[str, float]
    norms: Dict[str, float]
    measured: TimeSeries
    simulated: TimeSeries

    def traces(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.measured.t})
        for ch in DERIVED_CHANNELS:
            frame[f"{ch}_meas"] = self.measured[ch]
            frame[f"{ch}_sim"] = self.simulated[ch]
        return frame


def objective_weights(config: Mapping[str, Any]) -> Sequence[float]:
    weights = [float(w) for w in util.section(config, "objective")["weights"]]
    if len(weights) != len(DERIVED_CHANNELS):
        raise ValidationError(f"objective.weights needs {len(DERIVED_CHANNELS)} entries, got {len(weights)}")
    return weights


def score(config: Mapping[str, Any], kind: str, measured: TimeSeries, simulated: TimeSeries) -> Fit:
    meas, sim = align(measured.select(DERIVED_CHANNELS), simulated.select(DERIVED_CHANNELS))
    t_step = util.build_scenario(config).t_step
    norms = normalization_factors(meas, t_step, util.section(config, "signal").get("normalization", "pre_step_mean"))
    value = objective(meas, sim, objective_weights(config), norms)
    return Fit(str(kind), value, channel_nrmse(meas, sim, norms), norms, meas, sim)


def simulate_config(config: Mapping[str, Any], kind) -> TimeSeries:
    return simulate(util.build_scenario(config), util.build_system(config, kind), kind)


def evaluate_model(config: Mapping[str, Any], kind, measured: TimeSeries) -> Fit:
    return score(config, str(kind), measured, simulate_config(config, kind))


class ModelObjective:
    """Picklable objective mapping a parameter vector to the weighted nRMSE."""

    def __init__(self, config: Mapping[str, Any], kind: str, names: Sequence[str], measured: TimeSeries):
        self.config = dict(config)
        self.kind = kind
        self.names = list(names)
        self.measured = measured

    def __call__(self, x: np.ndarray) -> float:
        config = util.apply_parameters(self.config, dict(zip(self.names, np.asarray(x, dtype=float))))
        return evaluate_model(config, self.kind, self.measured).value


def response_metrics(config: Mapping[str, Any], series: TimeSeries, t_step: Optional[float] = None) -> FrequencyMetrics:
    """``frequency_metrics`` with the thresholds of the ``signal`` config section."""

    signal = util.section(config, "signal")
    scenario = util.build_scenario(config)
    return frequency_metrics(
        series,
        scenario.t_step if t_step is None else t_step,
        f_nominal=scenario.f_nominal,
        band_hz=float(signal.get("band_hz", 0.05)),
        nadir_threshold_hz=float(signal.get("nadir_threshold_hz", 0.01)),
        rocof_window=float(signal.get("rocof_window", 0.1)),
        recovery=float(signal.get("recovery", 0.999)),
        steady_window=float(signal.get("steady_window", 0.5)),
        holdoff=float(signal.get("nadir_holdoff", 0.05)),
    )


def rebound_window(config: Mapping[str, Any], measured: TimeSeries, window_end: Optional[float] = None):
    """Arresting and rebound window of the measured frequency: ``(t_nadir, t_end)``."""

    metrics = response_metrics(config, measured)
    if window_end is not None:
        return metrics.t_nadir, float(window_end)
    if metrics.rebound_end is None:
        logger.info("measured frequency has no nadir, window runs to the end of the record")
        return None, measured.t_end
    return metrics.t_nadir, metrics.rebound_end


def windowed_frequency_error(config: Mapping[str, Any], fit: Fit, window: tuple) -> Dict[str, float]:
    t_nadir, t_end = window
    t_step = util.build_scenario(config).t_step
    value, pct = window_metrics(fit.measured, fit.simulated, t_step, t_nadir, t_end, channel="f")
    return {"window_nrmse": value, "window_mape": pct}
