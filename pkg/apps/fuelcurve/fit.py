from __future__ import annotations

from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from genset.core import PerUnitBase
from genset.governor import estimate_fuel_curve

POWER_COLUMN = "power_kw"
FUEL_COLUMN = "fuel_lph"


def fit_report(
    points: pd.DataFrame,
    base: PerUnitBase,
    power_base_kw: Optional[float] = None,
    trate: float = 1.0,
) -> Tuple[Dict[str, Any], pd.DataFrame]:
    """Fitted line plus per-point residuals in L/h."""

    power_base = trate * base.s_base if power_base_kw is None else float(power_base_kw) * 1e3
    pairs = list(zip(points[POWER_COLUMN].to_numpy(float), points[FUEL_COLUMN].to_numpy(float)))
    k_turb, w_fnl = estimate_fuel_curve(pairs, base, power_base)

    power = points[POWER_COLUMN].to_numpy(float)
    fitted = (w_fnl + power * 1e3 / power_base / k_turb) * base.fuel_base
    residual = points[FUEL_COLUMN].to_numpy(float) - fitted
    residuals = pd.DataFrame(
        {POWER_COLUMN: power, FUEL_COLUMN: points[FUEL_COLUMN].to_numpy(float), "fitted_lph": fitted, "residual_lph": residual}
    )
    report = {
        "K_turb": k_turb,
        "w_fnl": w_fnl,
        "n_points": len(pairs),
        "power_base_kw": power_base / 1e3,
        "trate": trate,
        "fuel_base_lph": base.fuel_base,
        "rms_residual_lph": float(np.sqrt(np.mean(residual ** 2))),
        "max_abs_residual_lph": float(np.max(np.abs(residual))),
    }
    return report, residuals
