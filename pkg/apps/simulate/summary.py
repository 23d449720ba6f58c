from __future__ import annotations

from typing import Any, Dict, Mapping

from genset import util
from genset.core import TimeSeries
from genset.scoring import response_metrics
from genset.simengine import Scenario


def build_summary(series: TimeSeries, scenario: Scenario, config: Mapping[str, Any], kind: str) -> Dict[str, Any]:
    """Frequency metrics and steady-state values of a simulated run."""

    metrics = response_metrics(config, series, scenario.t_step)
    summary = {
        "governor": kind,
        "seed": util.run_seed(config),
        "scenario": {
            "p0_kw": scenario.p0,
            "q0_kvar": scenario.q0,
            "p1_kw": scenario.p1,
            "q1_kvar": scenario.q1,
            "t_step_s": scenario.t_step,
            "t_end_s": scenario.t_end,
            "dt_s": scenario.dt,
        },
    }
    summary.update(metrics.as_dict())
    return summary
