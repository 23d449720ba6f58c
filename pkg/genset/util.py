import contextlib
import copy
import fnmatch
import json
import logging
import pathlib
from typing import Any, Dict, Iterable, Iterator, Mapping, Optional, Sequence, Tuple

import click
import numpy as np
import pandas as pd

from .core import (
    GensetError,
    NumericalError,
    ParameterEntry,
    ParameterVector,
    PerUnitBase,
    TimeSeries,
    ValidationError,
    from_mapping,
)
from .excitation import Dc4bParams, VhzParams
from .governor import GOVERNOR_PARAMS, GovernorKind
from .machine import MachineParams
from .signal import DERIVED_CHANNELS, RAW_CHANNELS, PllParams, derive_channels
from .simengine import Scenario, SystemParams

logger = logging.getLogger(__name__)

CONFIG_DIR = pathlib.Path(__file__).resolve().parent.parent / "config"

KNOWN_SECTIONS = (
    "base",
    "machine",
    "exciter",
    "vhz",
    "gov",
    "scenario",
    "signal",
    "objective",
    "optimizer",
    "bounds",
    "identify",
    "compare",
    "fuel_curve",
)


class ConfigRegistry:
    """Lazy loader for the shipped default configuration."""

    _defaults: Optional[Dict[str, Any]] = None

    @classmethod
    def defaults(cls) -> Dict[str, Any]:
        if cls._defaults is not None:
            return copy.deepcopy(cls._defaults)

        defaults_path = CONFIG_DIR / "defaults.json"
        with defaults_path.open("r", encoding="utf-8") as fp:
            cls._defaults = json.load(fp)
        return copy.deepcopy(cls._defaults)

    @classmethod
    def reset(cls) -> None:
        cls._defaults = None


def deep_merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(dict(merged[key]), value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """Defaults with the user file at ``path`` merged over them."""

    config = ConfigRegistry.defaults()
    if not path:
        return config

    user_path = pathlib.Path(path)
    try:
        with user_path.open("r", encoding="utf-8") as fp:
            user = json.load(fp)
    except FileNotFoundError:
        raise ValidationError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON", [f"line {exc.lineno}: {exc.msg}"]) from None
    if not isinstance(user, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")

    unknown = sorted(set(user) - set(KNOWN_SECTIONS))
    if unknown:
        raise ValidationError("unknown config sections", unknown)
    logger.info("Loaded config overrides from %s", user_path)
    return deep_merge(config, user)


def section(config: Mapping[str, Any], name: str) -> Mapping[str, Any]:
    """Config section by dotted name, ``gov.ggov1`` for instance."""

    node: Any = config
    for part in name.split("."):
        if not isinstance(node, Mapping) or part not in node:
            raise ValidationError(f"config has no section {name!r}")
        node = node[part]
    return node


def build_base(config: Mapping[str, Any]) -> PerUnitBase:
    return from_mapping(PerUnitBase, section(config, "base"), "base")


def build_scenario(config: Mapping[str, Any]) -> Scenario:
    return from_mapping(Scenario, section(config, "scenario"), "scenario").check()


def build_pll(config: Mapping[str, Any]) -> PllParams:
    signal = section(config, "signal")
    return PllParams(
        f_nominal=float(section(config, "scenario").get("f_nominal", 60.0)),
        bandwidth_hz=float(signal.get("pll_bandwidth_hz", 20.0)),
        damping=float(signal.get("pll_damping", 0.707)),
    )


def build_system(config: Mapping[str, Any], kind) -> SystemParams:
    kind = GovernorKind.parse(kind)
    return SystemParams(
        base=build_base(config),
        machine=from_mapping(MachineParams, section(config, "machine"), "machine"),
        exciter=from_mapping(Dc4bParams, section(config, "exciter"), "exciter"),
        vhz=from_mapping(VhzParams, section(config, "vhz"), "vhz"),
        governor=from_mapping(GOVERNOR_PARAMS[kind], section(config, kind.config_section), kind.config_section),
        pll=build_pll(config),
    )


def split_name(qualified: str) -> Tuple[str, str]:
    if "." not in qualified:
        raise ValidationError(f"parameter name {qualified!r} needs a section prefix")
    sect, name = qualified.rsplit(".", 1)
    return sect, name


def model_sections(kind) -> Tuple[str, ...]:
    return ("machine", "exciter", GovernorKind.parse(kind).config_section)


def identification_vector(
    config: Mapping[str, Any],
    kind,
    freeze: Iterable[str] = (),
) -> ParameterVector:
    """Bounded parameters of the model for ``kind`` minus the frozen patterns."""

    sections = model_sections(kind)
    patterns = list(freeze)
    entries = []
    for qualified, bounds in section(config, "bounds").items():
        sect, name = split_name(qualified)
        if sect not in sections:
            continue
        if any(fnmatch.fnmatchcase(qualified, pattern) for pattern in patterns):
            continue
        values = section(config, sect)
        if name not in values:
            raise ValidationError(f"bounds name unknown parameter {qualified!r}")
        lower, upper = bounds
        entries.append(ParameterEntry(qualified, float(values[name]), float(lower), float(upper)))
    vector = ParameterVector(entries)
    malformed = [v for v in vector.violations() if "lower" in v]
    if malformed:
        raise ValidationError("inconsistent bounds", malformed)
    for outside in vector.violations():
        logger.warning("Starting value outside its search bounds: %s", outside)
    return vector


def apply_parameters(config: Mapping[str, Any], values: Mapping[str, float]) -> Dict[str, Any]:
    updated = copy.deepcopy(dict(config))
    for qualified, value in values.items():
        sect, name = split_name(qualified)
        target = section(updated, sect)
        if name not in target:
            raise ValidationError(f"unknown parameter {qualified!r}")
        target[name] = float(value)
    return updated


def write_frame_csv(frame: pd.DataFrame, path: pathlib.Path) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


def write_series_csv(series: TimeSeries, path: pathlib.Path) -> pathlib.Path:
    return write_frame_csv(series.to_frame(), path)


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan


def read_frame_csv(path: pathlib.Path, required: Sequence[str] = ()) -> pd.DataFrame:
    path = pathlib.Path(path)
    if not path.is_file():
        raise ValidationError(f"data file {path} does not exist")
    try:
        raw = pd.read_csv(path, encoding="utf-8", dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise ValidationError(f"malformed CSV {path}", [str(exc)]) from None
    except pd.errors.EmptyDataError:
        raise ValidationError(f"CSV {path} is empty") from None

    raw.columns = [c.strip() for c in raw.columns]
    missing = [c for c in required if c not in raw.columns]
    if missing:
        raise ValidationError(f"CSV {path} is missing columns", missing)

    frame = pd.DataFrame(index=raw.index)
    for column in raw.columns:
        values = raw[column].map(_parse_float)
        bad = values.isna()
        if bad.any():
            row = int(np.argmax(bad.to_numpy()))
            # header is line 1
            raise ValidationError(
                f"malformed row in {path}",
                [f"line {row + 2}, column {column!r}: {raw[column].iloc[row]!r}"],
            )
        frame[column] = values.astype(float)
    return frame


def read_series_csv(path: pathlib.Path, required: Sequence[str] = ("t",)) -> TimeSeries:
    frame = read_frame_csv(path, required=tuple(dict.fromkeys(("t",) + tuple(required))))
    return TimeSeries.from_frame(frame)


def ingest(path: pathlib.Path, kind: str, config: Mapping[str, Any]) -> TimeSeries:
    """Load measured data; raw waveforms go through the measurement pipeline."""

    if kind == "derived":
        return read_series_csv(path, required=DERIVED_CHANNELS).select(DERIVED_CHANNELS)
    if kind != "raw":
        raise ValidationError(f"unknown data kind {kind!r}", ["raw", "derived"])
    raw = read_series_csv(path, required=RAW_CHANNELS)
    lowpass_hz = section(config, "signal").get("lowpass_hz")
    logger.info("Deriving P, Q, V and f from %d raw samples at %.6g s", raw.n, raw.dt)
    return derive_channels(raw, pll=build_pll(config), lowpass_hz=lowpass_hz)


class CommandFailure(click.ClickException):
    """Command error carrying the process exit code."""

    def __init__(self, message: str, exit_code: int = 1):
        super().__init__(message)
        self.exit_code = exit_code


@contextlib.contextmanager
def command_errors(command: str) -> Iterator[None]:
    """Map library errors to exit code 1 (validation) or 2 (numerical)."""

    try:
        yield
    except ValidationError as exc:
        logger.error("%s rejected: %s", command, exc)
        raise CommandFailure(str(exc), exit_code=1) from exc
    except NumericalError as exc:
        logger.exception("%s failed numerically", command)
        raise CommandFailure(str(exc), exit_code=2) from exc
    except GensetError as exc:
        logger.exception("%s failed", command)
        raise CommandFailure(str(exc), exit_code=1) from exc


def resolve_config(path: Optional[str], seed: Optional[int] = None) -> Dict[str, Any]:
    """Config named on the command line, else the ``GENSET_CONFIG`` default.

    ``seed`` from ``--seed`` replaces ``optimizer.seed``.
    """

    from flask import current_app

    config = load_config(path or current_app.config.get("DEFAULT_CONFIG") or None)
    if seed is not None:
        config = deep_merge(config, {"optimizer": {"seed": int(seed)}})
    return config


def run_seed(config: Mapping[str, Any]) -> int:
    return int(section(config, "optimizer").get("seed", 0))


def output_dir(out: str) -> pathlib.Path:
    path = pathlib.Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _json_ready(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_json_ready(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_json(payload: Mapping[str, Any], path: pathlib.Path) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fp:
        json.dump(_json_ready(payload), fp, indent=2, sort_keys=True)
        fp.write("\n")
    return path


def config_option(fn):
    return click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False),
        default=None,
        help="JSON file merged over config/defaults.json.",
    )(fn)


def out_option(default: str):
    return click.option(
        "--out",
        type=click.Path(file_okay=False),
        default=default,
        show_default=True,
        help="Directory for result files.",
    )


def governor_option(fn):
    return click.option(
        "--governor",
        type=click.Choice([k.value for k in GovernorKind]),
        default=None,
        help="Engine-governor model.",
    )(fn)


def seed_option(fn):
    return click.option(
        "--seed",
        type=int,
        default=None,
        help="Overrides optimizer.seed; recorded with the results.",
    )(fn)
