from __future__ import annotations

import json
import logging
import pathlib
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import pandas as pd

from genset import util
from genset.core import TimeSeries, ValidationError
from genset.governor import GovernorKind
from genset.scoring import Fit, evaluate_model, rebound_window, score, windowed_frequency_error

logger = logging.getLogger(__name__)


def load_parameter_sets(paths: Iterable[str]) -> Dict[str, Dict[str, float]]:
    """Identified parameters keyed by governor, read from best-parameter files."""

    sets: Dict[str, Dict[str, float]] = {}
    for path in paths:
        try:
            with pathlib.Path(path).open("r", encoding="utf-8") as fp:
                payload = json.load(fp)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read parameter file {path}", [str(exc)]) from None
        if not isinstance(payload, dict) or "governor" not in payload or "parameters" not in payload:
            raise ValidationError(f"parameter file {path} needs 'governor' and 'parameters' entries")
        kind = GovernorKind.parse(payload["governor"]).value
        sets[kind] = {str(k): float(v) for k, v in payload["parameters"].items()}
    return sets


def _reduction(reference: float, other: float) -> float:
    if not other > 0:
        return float("nan")
    return 100.0 * (other - reference) / other


def build_table(
    config: Mapping[str, Any],
    measured: TimeSeries,
    governors: Sequence[str],
    parameter_sets: Mapping[str, Mapping[str, float]],
    simulated: Optional[Mapping[str, TimeSeries]] = None,
    reference: Optional[str] = None,
) -> tuple[pd.DataFrame, Dict[str, Fit]]:
    """One row per governor: cumulative objective, channel nRMSE and rebound-window errors."""

    settings = util.section(config, "compare")
    window = rebound_window(config, measured, settings.get("window_end"))
    simulated = simulated or {}
    fits: Dict[str, Fit] = {}
    rows: List[Dict[str, Any]] = []

    for kind in governors:
        kind = GovernorKind.parse(kind).value
        if kind in simulated:
            fit = score(config, kind, measured, simulated[kind])
        else:
            model_config = util.apply_parameters(config, parameter_sets.get(kind, {}))
            fit = evaluate_model(model_config, kind, measured)
        fits[kind] = fit
        row: Dict[str, Any] = {"governor": kind, "objective": fit.value}
        row.update({f"nrmse_{ch}": v for ch, v in fit.channels.items()})
        row.update(windowed_frequency_error(config, fit, window))
        rows.append(row)
        logger.info("compare %s: objective %.6g", kind, fit.value)

    table = pd.DataFrame(rows)
    if reference and reference in fits:
        ref = table.loc[table["governor"] == reference].iloc[0]
        table["objective_reduction_pct"] = [_reduction(ref["objective"], v) for v in table["objective"]]
        table["window_mape_reduction_pct"] = [_reduction(ref["window_mape"], v) for v in table["window_mape"]]
    return table, fits
