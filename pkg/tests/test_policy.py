import numpy as np
import pytest

from src.errors import ConfigError, NumericalError
from src.nn_core import mlp_forward
from src.policy import (
    LOG_STD_MAX,
    ActorParams,
    PolicyConfig,
    actor_init,
    critic_init,
    gaussian_entropy,
    gaussian_log_prob,
    policy_act,
    policy_logprob_entropy,
    policy_sample,
    value_eval,
)

CONFIG = PolicyConfig(hidden_dims=(16, 16))


@pytest.fixture
def obs():
    return np.random.default_rng(0).normal(size=(6, 20))


def test_actions_are_clamped_and_log_probs_per_row(obs):
    actor = actor_init(PolicyConfig(hidden_dims=(16,), init_log_std=LOG_STD_MAX), seed=0)
    actions, log_probs = policy_act(actor, obs, np.random.default_rng(1))
    assert actions.shape == (6, 4)
    assert log_probs.shape == (6,)
    assert np.all(np.abs(actions) <= 1.0)


def test_log_prob_is_of_the_unclamped_sample(obs):
    actor = actor_init(CONFIG, seed=0)
    raw, log_probs = policy_sample(actor, obs, np.random.default_rng(2))
    recomputed, entropy = policy_logprob_entropy(actor, obs, raw)
    np.testing.assert_allclose(log_probs, recomputed, rtol=1e-12)
    assert entropy.shape == (6,)
    _, clamped_log_probs = policy_act(actor, obs, np.random.default_rng(2))
    assert np.array_equal(clamped_log_probs, log_probs)


def test_deterministic_action_is_the_mean(obs):
    actor = actor_init(CONFIG, seed=3)
    mean, _ = mlp_forward(actor.mean, obs)
    actions, _ = policy_act(actor, obs, None, deterministic=True)
    assert np.array_equal(actions, np.clip(mean, -1.0, 1.0))


def test_gaussian_log_prob_matches_per_dimension_formula():
    rng = np.random.default_rng(4)
    mean = rng.normal(size=(5, 4))
    actions = rng.normal(size=(5, 4))
    log_std = rng.uniform(-1, 0.5, size=4)
    std = np.exp(log_std)
    expected = np.sum(-0.5 * ((actions - mean) / std) ** 2 - log_std - 0.5 * np.log(2 * np.pi), axis=1)
    np.testing.assert_allclose(gaussian_log_prob(actions, mean, log_std), expected, rtol=1e-12)


def test_entropy_formula():
    log_std = np.array([0.0, -1.0, 0.5, 0.2])
    expected = np.sum(0.5 * np.log(2 * np.pi * np.e * np.exp(2 * log_std)))
    assert gaussian_entropy(log_std) == pytest.approx(expected)


def test_sample_statistics_follow_mean_and_std():
    actor = actor_init(PolicyConfig(hidden_dims=(8,), init_log_std=np.log(0.3)), seed=0)
    obs = np.tile(np.random.default_rng(5).normal(size=20), (20_000, 1))
    raw, _ = policy_sample(actor, obs, np.random.default_rng(6))
    mean, _ = mlp_forward(actor.mean, obs[:1])
    np.testing.assert_allclose(raw.mean(axis=0), mean[0], atol=0.01)
    np.testing.assert_allclose(raw.std(axis=0), 0.3, atol=0.01)


def test_value_eval_shape(obs):
    critic = critic_init(CONFIG, seed=0)
    assert value_eval(critic, obs).shape == (6,)
    assert value_eval(critic, obs[0]).shape == (1,)


def test_non_finite_observation_rejected(obs):
    actor = actor_init(CONFIG, seed=0)
    bad = obs.copy()
    bad[2, 5] = np.inf
    with pytest.raises(NumericalError):
        policy_act(actor, bad, np.random.default_rng(0))


def test_from_arrays_clamps_log_std():
    actor = actor_init(CONFIG, seed=0)
    arrays = actor.arrays()
    arrays[-1] = np.full(4, 10.0)
    restored = ActorParams.from_arrays(actor.mean.spec, arrays)
    assert np.all(restored.log_std == LOG_STD_MAX)


def test_config_validation():
    with pytest.raises(ConfigError):
        PolicyConfig(hidden_dims=()).validate()
    with pytest.raises(ConfigError):
        PolicyConfig(init_log_std=5.0).validate()


def test_standard_normal_reference_values():
    zeros = np.zeros((1, 4))
    assert gaussian_log_prob(zeros, zeros, np.zeros(4))[0] == pytest.approx(-3.675754, abs=1e-6)
    assert gaussian_entropy(np.zeros(4)) == pytest.approx(5.675754, abs=1e-6)


def test_one_dimensional_density_integrates_to_one():
    mean, log_std = 0.3, np.log(0.7)
    grid = np.linspace(mean - 12.0, mean + 12.0, 200_001)
    dx = grid[1] - grid[0]
    log_p = gaussian_log_prob(grid[:, None], np.full((grid.size, 1), mean), np.array([log_std]))
    p = np.exp(log_p)
    assert np.sum(p) * dx == pytest.approx(1.0, abs=1e-8)
    assert -np.sum(p * log_p) * dx == pytest.approx(gaussian_entropy(np.array([log_std])), abs=1e-6)


def test_value_eval_is_the_critic_forward_pass(obs):
    critic = critic_init(CONFIG, seed=7)
    out, _ = mlp_forward(critic.value, obs)
    assert np.array_equal(value_eval(critic, obs), out[:, 0])
