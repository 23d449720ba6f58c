from __future__ import annotations

import logging

import click
from flask import Blueprint

from genset import util
from genset.simengine import simulate

from . import views
from .summary import build_summary

logger = logging.getLogger(__name__)

bp = Blueprint("simulate", __name__, cli_group=None)

METADATA = {
    "slug": "simulate",
    "name": "Load-step simulation",
    "description": "Simulate the generator through the configured load step and summarize the frequency response.",
}


@bp.cli.command("simulate")
@util.config_option
@util.governor_option
@util.out_option("results/simulate")
@util.seed_option
@click.option("--states", is_flag=True, help="Also write per-unit model states.")
@click.option("--waveforms", is_flag=True, help="Also write three-phase voltage and current waveforms.")
def simulate_command(config_path, governor, out, seed, states, waveforms):
    """Run the load-step scenario and write the derived channels."""

    with util.command_errors("simulate"):
        config = util.resolve_config(config_path, seed)
        kind = governor or util.section(config, "identify").get("governor", "ggov1d")
        scenario = util.build_scenario(config)
        params = util.build_system(config, kind)

        logger.info("simulate start: governor=%s seed=%d", kind, util.run_seed(config))
        series = simulate(scenario, params, kind, include_states=states, include_waveforms=waveforms)
        summary = build_summary(series, scenario, config, kind)

        target = util.output_dir(out)
        series_path = util.write_series_csv(series, target / views.SERIES_FILE)
        summary_path = util.write_json(summary, target / views.SUMMARY_FILE)
        logger.info("simulate finished: wrote %s and %s", series_path, summary_path)

    nadir = summary["nadir_hz"]
    click.echo(f"governor {kind}: nadir {'none' if nadir is None else f'{nadir:.4f} Hz'}")
    click.echo(f"wrote {series_path}")
    click.echo(f"wrote {summary_path}")


def register(app):
    return bp, METADATA
