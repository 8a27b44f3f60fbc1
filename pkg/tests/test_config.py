import pytest
import yaml

from src.config import (SHL_DIR_ENV, Settings, config_hash, deep_merge, load_settings,
                        resolve_dataset_path)
from src.errors import ConfigurationError


def test_defaults_file_matches_dataclass_defaults():
    assert load_settings() == Settings()


def test_user_file_and_overrides(tmp_path):
    path = tmp_path / "user.yaml"
    path.write_text(yaml.safe_dump({"training": {"epochs": 3}, "model": {"conv_widths": [4, 6, 8]}}))
    settings = load_settings(path, {"training": {"n_seeds": 2}})
    assert settings.training.epochs == 3
    assert settings.training.n_seeds == 2
    assert settings.model.conv_widths == (4, 6, 8)
    assert settings.training.batch_size == 64


def test_deep_merge_leaves_inputs_alone():
    base = {"a": {"b": 1, "c": 2}}
    merged = deep_merge(base, {"a": {"b": 5}})
    assert merged == {"a": {"b": 5, "c": 2}}
    assert base == {"a": {"b": 1, "c": 2}}


@pytest.mark.parametrize("overrides", [
    {"training": {"epochs": 0}},
    {"training": {"n_seeds": 0}},
    {"fusion": {"bottleneck_width": 0}},
    {"fusion": {"blend_period": 0}},
    {"fusion": {"blend_floor": 0.0}},
    {"fusion": {"blend_floor": -0.1}},
    {"fusion": {"blend_floor": 1.0}},
    {"fusion": {"blend_holdout_fraction": 1.0}},
    {"dsp": {"overlap_seconds": 5.0}},
    {"model": {"conv_widths": [4, 8]}},
    {"model": {"depth": 4}},
    {"scheduler": {}},
])
def test_invalid_settings(overrides):
    with pytest.raises(ConfigurationError):
        Settings().with_overrides(overrides)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_settings(tmp_path / "none.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("training: [1, 2\n")
    with pytest.raises(ConfigurationError, match="invalid YAML"):
        load_settings(bad)
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationError, match="mapping"):
        load_settings(listing)


def test_dataset_path_flag_wins(tmp_path, monkeypatch):
    monkeypatch.setenv(SHL_DIR_ENV, str(tmp_path / "env"))
    assert resolve_dataset_path(str(tmp_path / "flag")) == tmp_path / "flag"
    assert resolve_dataset_path(None) == tmp_path / "env"
    monkeypatch.delenv(SHL_DIR_ENV)
    assert resolve_dataset_path(None) is None


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
