from __future__ import annotations

import logging

import click
from flask import Blueprint

from genset import util

from . import views
from .search import run_identification

logger = logging.getLogger(__name__)

bp = Blueprint("identify", __name__, cli_group=None)

METADATA = {
    "slug": "identify",
    "name": "Parameter identification",
    "description": "Fit machine, exciter and governor parameters to a measured load step with the surrogate optimizer.",
}


@bp.cli.command("identify")
@util.config_option
@util.governor_option
@util.out_option("results/identify")
@util.seed_option
@click.option("--data", "data_path", required=True, type=click.Path(dir_okay=False), help="Measured CSV.")
@click.option("--kind", type=click.Choice(["raw", "derived"]), default=None, help="Defaults to identify.data_kind.")
@click.option("--max-evals", type=int, default=None, help="Overrides optimizer.max_evals.")
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Overrides optimizer.workers.")
def identify_command(config_path, governor, out, seed, data_path, kind, max_evals, workers):
    """Identify model parameters against measured data."""

    with util.command_errors("identify"):
        config = util.resolve_config(config_path, seed)
        settings = util.section(config, "identify")
        governor = governor or settings.get("governor", "ggov1d")
        kind = kind or settings.get("data_kind", "derived")
        measured = util.ingest(data_path, kind, config)

        logger.info("identify start: governor=%s data=%s", governor, data_path)
        result, best, fit = run_identification(config, governor, measured, max_evals=max_evals, workers=workers)

        target = util.output_dir(out)
        history_path = util.write_frame_csv(result.history, target / views.HISTORY_FILE)
        best_path = util.write_json(
            {
                "governor": governor,
                "seed": util.run_seed(config),
                "objective": fit.value,
                "optimizer_best": result.g_best,
                "evaluations": result.n_evals,
                "channel_nrmse": fit.channels,
                "parameters": best,
            },
            target / views.BEST_FILE,
        )
        comparison_path = util.write_frame_csv(fit.traces(), target / views.COMPARISON_FILE)
        logger.info("identify finished: best %.6g, wrote %s", fit.value, target)

    click.echo(f"governor {governor}: objective {fit.value:.6g} after {result.n_evals} evaluations")
    for path in (history_path, best_path, comparison_path):
        click.echo(f"wrote {path}")


def register(app):
    return bp, METADATA
