import pytest

from src.dyna import ModelConfig, SchedulerConfig
from src.env_surrogate import EnvParams
from src.experiment import TrainConfig
from src.policy import PolicyConfig


def make_tiny_config(**changes) -> TrainConfig:
    """Seconds-long run: K=2, N=8, six iterations, short episodes."""
    base = dict(
        seed=0,
        num_envs=2,
        rollout_length=8,
        total_steps=2 * 8 * 6,
        checkpoint_every=0,
        log_every=1,
        record_wall_clock=False,
        env=EnvParams(episode_length=10),
        policy=PolicyConfig(hidden_dims=(8, 8)),
        model=ModelConfig(hidden_dims=(16, 16), epochs=2, minibatch_size=8),
        scheduler=SchedulerConfig(a=0, b=500, x=0, y=0),
    )
    base.update(changes)
    return TrainConfig(**base)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return make_tiny_config()


@pytest.fixture
def tiny_dyna_config() -> TrainConfig:
    return make_tiny_config(scheduler=SchedulerConfig(a=0, b=2, x=0, y=2))
