import json

import numpy as np
import pytest

from src.checkpoint import MANIFEST_NAME, load_checkpoint, save_checkpoint
from src.dyna import ModelConfig, NormalizerStats, model_init
from src.errors import ConfigError
from src.policy import PolicyConfig, actor_init, critic_init


@pytest.fixture
def networks():
    config = PolicyConfig(hidden_dims=(8, 4))
    actor = actor_init(config, seed=1)
    actor.log_std = np.array([-0.3, 0.1, -1.2, 0.5])
    critic = critic_init(config, seed=2)
    model = model_init(ModelConfig(hidden_dims=(6,)), seed=3)
    rng = np.random.default_rng(0)
    model.input_stats = NormalizerStats(12.0, rng.normal(size=24), rng.uniform(0.1, 3.0, size=24))
    model.output_stats = NormalizerStats(12.0, rng.normal(size=14), rng.uniform(0.1, 3.0, size=14))
    return actor, critic, model


def test_round_trip_is_bit_exact(tmp_path, networks):
    actor, critic, model = networks
    path = save_checkpoint(tmp_path / "ckpt", actor, critic, model, iteration=17)
    loaded = load_checkpoint(path)

    assert loaded.iteration == 17
    assert loaded.actor.mean.spec == actor.mean.spec
    for a, b in zip(actor.arrays(), loaded.actor.arrays()):
        assert np.array_equal(a, b)
    for a, b in zip(critic.value.arrays(), loaded.critic.value.arrays()):
        assert np.array_equal(a, b)
    for a, b in zip(model.network.arrays(), loaded.model.network.arrays()):
        assert np.array_equal(a, b)
    assert loaded.model.input_stats.count == 12.0
    assert np.array_equal(loaded.model.output_stats.var, model.output_stats.var)


def test_checkpoint_without_model(tmp_path, networks):
    actor, critic, _ = networks
    loaded = load_checkpoint(save_checkpoint(tmp_path, actor, critic))
    assert loaded.model is None
    assert loaded.iteration == 0


def test_missing_manifest(tmp_path):
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path)


def test_truncated_array_file(tmp_path, networks):
    actor, critic, model = networks
    save_checkpoint(tmp_path, actor, critic, model)
    data = (tmp_path / "actor.0.bin").read_bytes()
    (tmp_path / "actor.0.bin").write_bytes(data[:-8])
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path)


def test_missing_array_file(tmp_path, networks):
    actor, critic, _ = networks
    save_checkpoint(tmp_path, actor, critic)
    (tmp_path / "critic.1.bin").unlink()
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path)


def test_unknown_format_version(tmp_path, networks):
    actor, critic, _ = networks
    save_checkpoint(tmp_path, actor, critic)
    manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
    manifest["format_version"] = 99
    (tmp_path / MANIFEST_NAME).write_text(json.dumps(manifest))
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path)
