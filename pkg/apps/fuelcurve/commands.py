from __future__ import annotations

import logging

import click
from flask import Blueprint

from genset import util
from genset.core import ValidationError
from genset.governor import GovernorKind

from . import views
from .fit import POWER_COLUMN, FUEL_COLUMN, fit_report

logger = logging.getLogger(__name__)

bp = Blueprint("fuelcurve", __name__, cli_group=None)

METADATA = {
    "slug": "fuelcurve",
    "name": "Fuel curve fit",
    "description": "Estimate the engine gain and no-load fuel flow from fuel-versus-power points.",
}

VALVE_GOVERNORS = (GovernorKind.GGOV1.value, GovernorKind.GGOV1D.value)


def turbine_rating(config, governor: str) -> float:
    """``trate`` of the valve governor the fitted gain is meant for."""

    kind = GovernorKind.parse(governor)
    if kind.value not in VALVE_GOVERNORS:
        raise ValidationError(f"fuel curve applies to {' or '.join(VALVE_GOVERNORS)}, not {kind.value}")
    return float(util.section(config, kind.config_section)["trate"])


@bp.cli.command("fit-fuel-curve")
@util.config_option
@util.governor_option
@util.out_option("results/fuel_curve")
@util.seed_option
@click.option(
    "--data",
    "data_path",
    required=True,
    type=click.Path(dir_okay=False),
    help=f"CSV with {POWER_COLUMN} and {FUEL_COLUMN} columns.",
)
def fit_fuel_curve_command(config_path, governor, out, seed, data_path):
    """Fit K_turb and w_fnl to measured fuel consumption."""

    with util.command_errors("fit-fuel-curve"):
        config = util.resolve_config(config_path, seed)
        settings = util.section(config, "fuel_curve")
        governor = governor or settings.get("governor", GovernorKind.GGOV1D.value)
        trate = turbine_rating(config, governor)
        points = util.read_frame_csv(data_path, required=(POWER_COLUMN, FUEL_COLUMN))
        report, residuals = fit_report(points, util.build_base(config), settings.get("power_base_kw"), trate)
        report.update(governor=GovernorKind.parse(governor).value, seed=util.run_seed(config))

        target = util.output_dir(out)
        report_path = util.write_json(report, target / views.REPORT_FILE)
        residuals_path = util.write_frame_csv(residuals, target / views.RESIDUALS_FILE)
        logger.info("fit-fuel-curve finished: wrote %s and %s", report_path, residuals_path)

    click.echo(f"K_turb {report['K_turb']:.6g}  w_fnl {report['w_fnl']:.6g}")
    click.echo(f"wrote {report_path}")


def register(app):
    return bp, METADATA
