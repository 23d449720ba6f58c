import copy
import json

import pytest

from genset import util
from genset.app import create_app


@pytest.fixture()
def config():
    return util.load_config()


@pytest.fixture()
def write_config(tmp_path):
    """Write a config override file and return its path."""

    def _write(payload, name="override.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return str(path)

    return _write


@pytest.fixture()
def short_config(config):
    """Defaults with a short, coarse scenario for end-to-end runs."""

    cfg = copy.deepcopy(config)
    cfg["scenario"].update({"t_step": 0.2, "t_end": 0.6, "dt": 2e-4})
    return cfg


@pytest.fixture()
def app(monkeypatch):
    monkeypatch.delenv("GENSET_CONFIG", raising=False)
    app = create_app()
    app.config.update({"TESTING": True})
    return app


@pytest.fixture()
def runner(app):
    return app.test_cli_runner()
