from __future__ import annotations

import logging

import click
from flask import Blueprint

from genset import util
from genset.scoring import response_metrics

from . import views

logger = logging.getLogger(__name__)

bp = Blueprint("analyze", __name__, cli_group=None)

METADATA = {
    "slug": "analyze",
    "name": "Measurement analysis",
    "description": "Derive P, Q, V and f from recorded data and report the frequency response metrics.",
}


@bp.cli.command("analyze")
@util.config_option
@util.out_option("results/analyze")
@util.seed_option
@click.option("--data", "data_path", required=True, type=click.Path(dir_okay=False), help="Measured CSV.")
@click.option("--kind", type=click.Choice(["raw", "derived"]), default="raw", show_default=True)
@click.option("--t-step", type=float, default=None, help="Load-step time; defaults to scenario.t_step.")
def analyze_command(config_path, out, seed, data_path, kind, t_step):
    """Ingest a recording and write derived channels plus frequency metrics."""

    with util.command_errors("analyze"):
        config = util.resolve_config(config_path, seed)
        t_step = util.build_scenario(config).t_step if t_step is None else t_step

        logger.info("analyze start: %s (%s)", data_path, kind)
        series = util.ingest(data_path, kind, config)
        metrics = response_metrics(config, series, t_step)

        target = util.output_dir(out)
        derived_path = util.write_series_csv(series, target / views.DERIVED_FILE)
        metrics_path = util.write_json(
            {
                "source": str(data_path),
                "kind": kind,
                "t_step_s": t_step,
                "seed": util.run_seed(config),
                **metrics.as_dict(),
            },
            target / views.METRICS_FILE,
        )
        logger.info("analyze finished: wrote %s and %s", derived_path, metrics_path)

    click.echo(f"wrote {derived_path}")
    click.echo(f"wrote {metrics_path}")


def register(app):
    return bp, METADATA
