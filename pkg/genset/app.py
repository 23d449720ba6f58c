import importlib
import logging
import os
import pathlib
from dataclasses import dataclass, field
from logging.handlers import RotatingFileHandler
from types import ModuleType
from typing import Dict, Iterator, List, Optional, Tuple

from flask import Blueprint, Flask
from flask.cli import FlaskGroup

BASE_DIR = pathlib.Path(__file__).resolve().parent.parent
APPS_DIR = BASE_DIR / "apps"
LOG_DIR = BASE_DIR / "logs"
LOG_NAME = "genset.log"

_LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"

logger = logging.getLogger(__name__)


def _open_log_file(formatter: logging.Formatter) -> RotatingFileHandler:
    LOG_DIR.mkdir(parents=True, exist_ok=True)
    handler = RotatingFileHandler(LOG_DIR / LOG_NAME, maxBytes=1_048_576, backupCount=5)
    handler.setLevel(logging.INFO)
    handler.setFormatter(formatter)
    return handler


def _ensure_stderr(root: logging.Logger, formatter: logging.Formatter) -> None:
    if any(isinstance(h, logging.StreamHandler) for h in root.handlers):
        return
    stream = logging.StreamHandler()
    stream.setLevel(logging.INFO)
    stream.setFormatter(formatter)
    root.addHandler(stream)


def configure_logging() -> None:
    """Route INFO and above to ``logs/genset.log``, or stderr if the file is unusable.

    Safe to call repeatedly: a handler for the same file is never added twice.
    """
    formatter = logging.Formatter(_LOG_FORMAT)
    root = logging.getLogger()
    root.setLevel(logging.INFO)

    try:
        handler = _open_log_file(formatter)
    except OSError as exc:
        _ensure_stderr(root, formatter)
        root.warning("File logging disabled; falling back to stderr (%s)", exc)
        return

    if any(
        isinstance(h, RotatingFileHandler) and h.baseFilename == handler.baseFilename
        for h in root.handlers
    ):
        handler.close()
        return
    root.addHandler(handler)


@dataclass(frozen=True)
class SubApp:
    name: str
    blueprint: Blueprint
    metadata: Dict[str, str] = field(default_factory=dict)


def _command_modules() -> Iterator[Tuple[str, ModuleType]]:
    for path in sorted(APPS_DIR.iterdir()):
        if not path.is_dir() or path.name.startswith("_"):
            continue
        module_name = f"apps.{path.name}.commands"
        try:
            yield path.name, importlib.import_module(module_name)
        except ModuleNotFoundError as exc:
            # only a missing commands module is skipped; broken imports inside it are not
            if exc.name != module_name:
                raise


def load_subapps(app: Flask) -> List[SubApp]:
    subapps: List[SubApp] = []
    for slug, module in _command_modules():
        register = getattr(module, "register", None)
        if register is None:
            continue
        blueprint, metadata = register(app)
        app.register_blueprint(blueprint)
        subapps.append(SubApp(slug, blueprint, metadata))
    app.config["SUBAPPS"] = subapps
    logger.debug("Registered commands from %s", ", ".join(s.name for s in subapps))
    return subapps


def create_app(config_path: Optional[str] = None) -> Flask:
    configure_logging()
    app = Flask(__name__)
    # commands fall back to this file when --config is not given
    app.config["DEFAULT_CONFIG"] = config_path or os.getenv("GENSET_CONFIG", "")
    load_subapps(app)
    return app


cli = FlaskGroup(
    name="genset",
    help="Diesel generator simulation and parameter identification.",
    create_app=create_app,
    add_default_commands=False,
    load_dotenv=False,
)


def main() -> None:
    cli.main(prog_name="genset")
