from __future__ import annotations

import logging

import click
from flask import Blueprint

from genset import util
from genset.core import ValidationError
from genset.governor import GovernorKind
from genset.signal import DERIVED_CHANNELS

from . import views
from .table import build_table, load_parameter_sets

logger = logging.getLogger(__name__)

bp = Blueprint("compare", __name__, cli_group=None)

METADATA = {
    "slug": "compare",
    "name": "Governor comparison",
    "description": "Score each engine-governor model against the same measured load step.",
}


def _parse_simulated(values):
    traces = {}
    for item in values:
        kind, sep, path = item.partition("=")
        if not sep or not path:
            raise ValidationError(f"--simulated expects KIND=CSV, got {item!r}")
        traces[GovernorKind.parse(kind).value] = util.read_series_csv(path, required=DERIVED_CHANNELS)
    return traces


@bp.cli.command("compare")
@util.config_option
@util.governor_option
@util.out_option("results/compare")
@util.seed_option
@click.option("--data", "data_path", required=True, type=click.Path(dir_okay=False), help="Measured CSV.")
@click.option("--kind", type=click.Choice(["raw", "derived"]), default=None, help="Defaults to identify.data_kind.")
@click.option("--params", "param_files", multiple=True, type=click.Path(dir_okay=False),
              help="Best-parameter file written by identify; repeatable.")
@click.option("--simulated", "simulated_specs", multiple=True, metavar="KIND=CSV",
              help="Use a stored derived trace for KIND instead of simulating; repeatable.")
def compare_command(config_path, governor, out, seed, data_path, kind, param_files, simulated_specs):
    """Tabulate cumulative and rebound-window errors per governor."""

    with util.command_errors("compare"):
        config = util.resolve_config(config_path, seed)
        settings = util.section(config, "compare")
        governors = [governor] if governor else list(settings.get("governors", [k.value for k in GovernorKind]))
        kind = kind or util.section(config, "identify").get("data_kind", "derived")
        measured = util.ingest(data_path, kind, config)

        logger.info("compare start: governors=%s data=%s seed=%d", ",".join(governors), data_path, util.run_seed(config))
        table, fits = build_table(
            config,
            measured,
            governors,
            load_parameter_sets(param_files),
            simulated=_parse_simulated(simulated_specs),
            reference=settings.get("reference"),
        )

        target = util.output_dir(out)
        table_path = util.write_frame_csv(table, target / views.TABLE_FILE)
        for name, fit in fits.items():
            util.write_frame_csv(fit.traces(), target / views.TRACES_FILE.format(kind=name))
        logger.info("compare finished: wrote %s", table_path)

    click.echo(table.to_string(index=False))
    click.echo(f"wrote {table_path}")


def register(app):
    return bp, METADATA
