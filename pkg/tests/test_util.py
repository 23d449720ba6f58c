import json
import logging

import numpy as np
import pandas as pd
import pytest

from genset import util
from genset.core import ConvergenceError, TimeSeries, ValidationError
from genset.excitation import validate_dc4b
from genset.governor import GovernorKind
from genset.simengine import SystemParams


def test_defaults_cover_every_section(config):
    assert set(config) == set(util.KNOWN_SECTIONS)
    for kind in GovernorKind:
        assert kind.value in config["gov"]


def test_defaults_are_copied(config):
    config["machine"]["H"] = 99.0
    assert util.load_config()["machine"]["H"] != 99.0


def test_user_file_merges_over_defaults(write_config):
    path = write_config({"machine": {"H": 0.6}, "gov": {"degov": {"K": 30.0}}})
    config = util.load_config(path)
    assert config["machine"]["H"] == 0.6
    assert config["machine"]["Lmd"] == util.load_config()["machine"]["Lmd"]
    assert config["gov"]["degov"]["K"] == 30.0
    assert "ggov1" in config["gov"]


def test_deep_merge_replaces_lists():
    merged = util.deep_merge({"a": {"b": [1, 2], "c": 1}}, {"a": {"b": [3]}})
    assert merged == {"a": {"b": [3], "c": 1}}


@pytest.mark.parametrize(
    "content,message",
    [
        ('{"bogus": {}}', "unknown config sections"),
        ("[1, 2]", "JSON object"),
        ("{not json", "not valid JSON"),
    ],
)
def test_bad_config_files(tmp_path, content, message):
    path = tmp_path / "bad.json"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ValidationError, match=message):
        util.load_config(str(path))


def test_missing_config_file(tmp_path):
    with pytest.raises(ValidationError, match="does not exist"):
        util.load_config(str(tmp_path / "absent.json"))


def test_section_lookup(config):
    assert util.section(config, "gov.ggov1d")["K"] == config["gov"]["ggov1d"]["K"]
    with pytest.raises(ValidationError):
        util.section(config, "gov.steam")


@pytest.mark.parametrize("kind", [k.value for k in GovernorKind])
def test_build_system(config, kind):
    params = util.build_system(config, kind)
    assert isinstance(params, SystemParams)
    assert params.pll.bandwidth_hz == config["signal"]["pll_bandwidth_hz"]


def test_build_system_rejects_unknown_parameter(config):
    config["gov"]["degov"]["droop"] = 0.05
    with pytest.raises(ValidationError, match="unknown keys"):
        util.build_system(config, "degov")


def test_split_name():
    assert util.split_name("gov.ggov1d.K") == ("gov.ggov1d", "K")
    with pytest.raises(ValidationError):
        util.split_name("K")


def test_identification_vector_follows_freeze(config):
    vector = util.identification_vector(config, "ggov1d", ["machine.*", "exciter.*"])
    assert vector.names
    assert all(name.startswith("gov.ggov1d.") for name in vector.names)
    assert vector["gov.ggov1d.K"] == config["gov"]["ggov1d"]["K"]

    everything = util.identification_vector(config, "simple")
    assert "machine.H" in everything
    assert "exciter.K_g" in everything
    assert not any(name.startswith("gov.degov.") for name in everything.names)


@pytest.mark.parametrize("kind", [k.value for k in GovernorKind])
def test_defaults_start_inside_their_bounds(config, kind):
    assert util.identification_vector(config, kind).violations() == []


@pytest.mark.parametrize("corner", ["lower", "upper"])
def test_exciter_search_box_respects_restrictions(config, corner):
    vector = util.identification_vector(config, "simple", ["machine.*", "gov.*"])
    assert vector.names
    values = dict(zip(vector.names, getattr(vector, corner)))
    params = util.build_system(util.apply_parameters(config, values), "simple")
    assert validate_dc4b(params.exciter) == []


def test_start_outside_bounds_is_logged(config, caplog):
    config["bounds"]["gov.simple.C"] = [1.5, 2.0]
    with caplog.at_level(logging.WARNING, logger="genset.util"):
        util.identification_vector(config, "simple")
    assert "gov.simple.C" in caplog.text


def test_identification_vector_rejects_bad_bounds(config):
    config["bounds"]["gov.simple.K_p"] = [40.0, 1.0]
    with pytest.raises(ValidationError, match="inconsistent bounds"):
        util.identification_vector(config, "simple")
    config["bounds"]["gov.simple.K_p"] = [1.0, 40.0]
    config["bounds"]["gov.simple.K_x"] = [1.0, 2.0]
    with pytest.raises(ValidationError, match="unknown parameter"):
        util.identification_vector(config, "simple")


def test_apply_parameters_leaves_input_alone(config):
    updated = util.apply_parameters(config, {"gov.ggov1d.K": 100.0, "machine.H": 0.5})
    assert updated["gov"]["ggov1d"]["K"] == 100.0
    assert updated["machine"]["H"] == 0.5
    assert config["gov"]["ggov1d"]["K"] != 100.0
    with pytest.raises(ValidationError):
        util.apply_parameters(config, {"machine.bogus": 1.0})


def test_series_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    series = TimeSeries(0.0, 1e-4, {"P": rng.normal(size=50) * 100, "f": 60 + rng.normal(size=50) / 3})
    path = util.write_series_csv(series, tmp_path / "out" / "series.csv")
    assert path.read_bytes().startswith(b"t,P,f\n")
    assert b"\r\n" not in path.read_bytes()
    back = util.read_series_csv(path, required=("P", "f"))
    np.testing.assert_array_equal(back["P"], series["P"])
    np.testing.assert_array_equal(back["f"], series["f"])


def test_malformed_row_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,P\n0.0,1.0\n0.1,abc\n0.2,3.0\n", encoding="utf-8")
    with pytest.raises(ValidationError) as excinfo:
        util.read_frame_csv(path)
    assert "line 3" in str(excinfo.value)


def test_missing_columns_and_files(tmp_path):
    path = tmp_path / "data.csv"
    pd.DataFrame({"t": [0.0, 0.1], "P": [1.0, 2.0]}).to_csv(path, index=False)
    with pytest.raises(ValidationError, match="missing columns"):
        util.read_series_csv(path, required=("P", "Q"))
    with pytest.raises(ValidationError, match="does not exist"):
        util.read_frame_csv(tmp_path / "none.csv")
    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(ValidationError, match="empty"):
        util.read_frame_csv(empty)


def test_ingest_derived_keeps_measurement_channels(tmp_path, config):
    path = tmp_path / "derived.csv"
    frame = pd.DataFrame({"t": [0.0, 0.1, 0.2], "P": [80.0] * 3, "Q": [0.0] * 3, "V": [277.1] * 3,
                          "f": [60.0] * 3, "extra": [1.0] * 3})
    frame.to_csv(path, index=False)
    series = util.ingest(path, "derived", config)
    assert set(series.channels) == {"P", "Q", "V", "f"}
    with pytest.raises(ValidationError):
        util.ingest(path, "raw", config)
    with pytest.raises(ValidationError):
        util.ingest(path, "compressed", config)


def test_command_errors_map_exit_codes():
    with pytest.raises(util.CommandFailure) as excinfo:
        with util.command_errors("test"):
            raise ValidationError("bad input")
    assert excinfo.value.exit_code == 1
    with pytest.raises(util.CommandFailure) as excinfo:
        with util.command_errors("test"):
            raise ConvergenceError("no equilibrium", 1.0)
    assert excinfo.value.exit_code == 2


def test_write_json_replaces_non_finite(tmp_path):
    path = util.write_json({"b": float("nan"), "a": np.float64(1.5), "c": [np.int64(2)]}, tmp_path / "x.json")
    text = path.read_text(encoding="utf-8")
    assert json.loads(text) == {"a": 1.5, "b": None, "c": [2]}
    assert text.index('"a"') < text.index('"b"')
