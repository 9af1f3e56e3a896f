from dataclasses import replace
from pathlib import Path

import pytest

from src.dyna import SchedulerConfig
from src.errors import ConfigError
from src.experiment import TrainConfig
from src.run_config import (
    RunManifest,
    apply_overrides,
    config_hash,
    flatten_config,
    load_config,
    parse_config_text,
    parse_overrides,
    read_calibration,
    read_manifest,
    serialize_config,
    write_calibration,
    write_manifest,
)
from tests.conftest import make_tiny_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_serialized_config_parses_back(tiny_dyna_config):
    config = replace(tiny_dyna_config, threshold=12.5, output_dir="runs/x")
    text = serialize_config(config)
    assert "# [scheduler]" in text
    assert parse_config_text(text) == config


def test_default_config_round_trip():
    assert parse_config_text(serialize_config(TrainConfig())) == TrainConfig()


def test_base_file_matches_defaults():
    assert load_config(CONFIGS / "base.cfg") == TrainConfig()


def test_shipped_configs_are_valid():
    smoke = load_config(CONFIGS / "smoke.cfg")
    assert smoke.scheduler.y == 2 and smoke.uses_model
    assert load_config(CONFIGS / "ours_4step.cfg").scheduler.y == 4


def test_overrides_apply_to_sections_and_scalars():
    config = apply_overrides(TrainConfig(), ["seed=7", "scheduler.y=3", "threshold=none",
                                             "policy.hidden_dims=32, 32", "record_wall_clock=true"])
    assert config.seed == 7
    assert config.scheduler == SchedulerConfig(y=3)
    assert config.threshold is None
    assert config.policy.hidden_dims == (32, 32)
    assert config.record_wall_clock is True


def test_load_config_applies_preset_then_overrides():
    config = load_config(None, overrides=["scheduler.b=100"], preset="ours_2step")
    assert config.rollout_length == 22
    assert config.scheduler.y == 2 and config.scheduler.b == 100


@pytest.mark.parametrize("items", [
    ["nonsense=1"],
    ["scheduler.z=1"],
    ["seed.x=1"],
    ["seed=abc"],
    ["record_wall_clock=maybe"],
    ["env.cmd_vx_range=1.0"],
])
def test_bad_overrides(items):
    with pytest.raises(ConfigError):
        apply_overrides(TrainConfig(), items)


def test_override_needs_equals_sign():
    with pytest.raises(ConfigError):
        parse_overrides(["seed"])
    assert parse_overrides(["model.lr=0.01"]) == {"model.lr": "0.01"}


def test_invalid_values_fail_validation():
    with pytest.raises(ConfigError):
        load_config(None, overrides=["scheduler.y=30"])
    with pytest.raises(ConfigError):
        load_config(None, overrides=["total_steps=10"])


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_config_hash_ignores_output_dir():
    config = make_tiny_config()
    assert config_hash(config) == config_hash(replace(config, output_dir="elsewhere"))
    assert config_hash(config) != config_hash(replace(config, seed=1))


def test_flatten_uses_dotted_keys():
    flat = flatten_config(TrainConfig())
    assert flat["scheduler.max_synthetic"] == "4"
    assert flat["threshold"] == "none"
    assert flat["model.hidden_dims"] == "128,128,128,128"


def test_manifest_round_trip(tmp_path, tiny_config):
    manifest = RunManifest.for_config(tiny_config)
    write_manifest(tmp_path, manifest)
    loaded = read_manifest(tmp_path)
    assert loaded == manifest
    assert loaded.train_config() == tiny_config
    with pytest.raises(ConfigError):
        read_manifest(tmp_path / "nowhere")


def test_calibration_file(tmp_path):
    path = write_calibration(tmp_path / "calibration.json", 42.5, fraction=0.85)
    assert read_calibration(path) == 42.5
    with pytest.raises(ConfigError):
        read_calibration(tmp_path / "missing.json")
