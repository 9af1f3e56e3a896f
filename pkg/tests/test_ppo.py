import numpy as np
import pytest

from src.errors import ConfigError, RolloutError
from src.policy import ActorParams, CriticParams, PolicyConfig, actor_init, critic_init, gaussian_log_prob, policy_sample
from src.nn_core import MlpParams, mlp_forward
from src.ppo import (
    PpoHyper,
    RolloutBatch,
    clipped_surrogate,
    compute_gae,
    ppo_loss_and_grads,
    ppo_update,
    synthetic_is_suffix,
)


def brute_force_gae(rewards, values, dones, bootstrap, gamma, lam):
    """Sum of discounted TD errors, truncated at the first episode end."""
    k, n = rewards.shape
    next_values = np.concatenate([values[:, 1:], bootstrap[:, None]], axis=1)
    deltas = rewards + gamma * (1.0 - dones) * next_values - values
    advantages = np.zeros((k, n))
    for row in range(k):
        for t in range(n):
            total, weight = 0.0, 1.0
            for s in range(t, n):
                total += weight * deltas[row, s]
                if dones[row, s]:
                    break
                weight *= gamma * lam
            advantages[row, t] = total
    return advantages


def test_gae_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        k, n = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        rewards = rng.normal(size=(k, n))
        values = rng.normal(size=(k, n))
        dones = (rng.random((k, n)) < 0.2).astype(float)
        bootstrap = rng.normal(size=k)
        gamma, lam = rng.uniform(0.5, 1.0), rng.uniform(0.0, 1.0)
        advantages, returns = compute_gae(rewards, values, dones, bootstrap, gamma, lam)
        expected = brute_force_gae(rewards, values, dones, bootstrap, gamma, lam)
        np.testing.assert_allclose(advantages, expected, rtol=0, atol=1e-10)
        np.testing.assert_allclose(returns, expected + values, rtol=0, atol=1e-10)


def test_gae_with_unit_discounts_is_monte_carlo_return():
    rewards = np.array([[1.0, 2.0, 3.0]])
    values = np.array([[0.5, -1.0, 2.0]])
    _, returns = compute_gae(rewards, values, np.zeros((1, 3)), np.array([10.0]), 1.0, 1.0)
    np.testing.assert_allclose(returns, [[16.0, 15.0, 13.0]])


def test_done_stops_bootstrapping():
    _, returns = compute_gae(np.array([[1.0]]), np.array([[0.0]]), np.array([[1.0]]), np.array([100.0]), 0.99, 0.95)
    assert returns[0, 0] == 1.0


def test_gae_argument_checks():
    with pytest.raises(ConfigError):
        compute_gae(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)), np.zeros(1), 1.5, 0.9)
    with pytest.raises(RolloutError):
        compute_gae(np.zeros((1, 2)), np.zeros((1, 3)), np.zeros((1, 2)), np.zeros(1), 0.9, 0.9)


def test_clipped_surrogate_examples():
    assert clipped_surrogate(1.5, 1.0, 0.2) == pytest.approx(1.2)
    assert clipped_surrogate(0.5, -1.0, 0.2) == pytest.approx(-0.8)
    assert clipped_surrogate(1.1, 2.0, 0.2) == pytest.approx(2.2)


def test_synthetic_suffix_detection():
    assert synthetic_is_suffix(np.array([[False, False, True, True]]))
    assert synthetic_is_suffix(np.zeros((2, 5), dtype=bool))
    assert not synthetic_is_suffix(np.array([[False, True, False]]))


def _batch(seed: int, k: int = 2, n: int = 6, n_s: int = 2, config=PolicyConfig(hidden_dims=(8,))):
    rng = np.random.default_rng(seed)
    actor = actor_init(config, seed)
    critic = critic_init(config, seed + 1)
    obs = rng.normal(size=(k, n, 20))
    raw, log_probs = policy_sample(actor, obs.reshape(-1, 20), rng)
    synthetic = np.zeros((k, n), dtype=bool)
    synthetic[:, n - n_s:] = True
    batch = RolloutBatch(
        obs=obs,
        actions=raw.reshape(k, n, 4),
        log_probs=log_probs.reshape(k, n),
        rewards=rng.uniform(0, 1, size=(k, n)),
        dones=np.zeros((k, n), dtype=bool),
        values=rng.normal(size=(k, n)),
        synthetic=synthetic,
        bootstrap_values=rng.normal(size=k),
    )
    return actor, critic, batch


def test_batch_validation():
    _, _, batch = _batch(0)
    batch.validate()
    batch.synthetic[0] = [False, True, False, False, True, True]
    with pytest.raises(RolloutError):
        batch.validate()
    _, _, batch = _batch(0)
    batch.dones[1, -1] = True
    with pytest.raises(RolloutError):
        batch.validate()


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-4)


def test_loss_gradients_match_finite_differences():
    actor, critic, batch = _batch(1, config=PolicyConfig(hidden_dims=(6,)))
    hyper = PpoHyper(value_coef=0.7, entropy_coef=0.01)
    obs = batch.obs.reshape(-1, 20)
    actions = batch.actions.reshape(-1, 4)
    old = batch.log_probs.reshape(-1)
    rng = np.random.default_rng(2)
    advantages = rng.normal(size=old.shape)
    returns = rng.normal(size=old.shape)

    def loss(actor_arrays, critic_arrays):
        a = ActorParams(MlpParams.from_arrays(actor.mean.spec, actor_arrays[:-1]), actor_arrays[-1])
        c = CriticParams(MlpParams.from_arrays(critic.value.spec, critic_arrays))
        terms, _, _ = ppo_loss_and_grads(a, c, obs, actions, old, advantages, returns, hyper)
        return terms["loss"]

    _, actor_grads, critic_grads = ppo_loss_and_grads(actor, critic, obs, actions, old, advantages, returns, hyper)
    eps = 1e-5
    for arrays, grads, is_actor in ((actor.arrays(), actor_grads, True), (critic.value.arrays(), critic_grads, False)):
        for _ in range(50):
            i = int(rng.integers(len(arrays)))
            j = int(rng.integers(arrays[i].size))
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[i].flat[j] += eps
            minus[i].flat[j] -= eps
            if is_actor:
                numeric = (loss(plus, critic.value.arrays()) - loss(minus, critic.value.arrays())) / (2 * eps)
            else:
                numeric = (loss(actor.arrays(), plus) - loss(actor.arrays(), minus)) / (2 * eps)
            assert _rel_err(grads[i].flat[j], numeric) < 1e-4


def test_zero_learning_rate_leaves_parameters_unchanged():
    actor, critic, batch = _batch(3)
    hyper = PpoHyper(lr=0.0, epochs=2, minibatches=3)
    update = ppo_update(actor, critic, batch, hyper, np.random.default_rng(0))
    for a, b in zip(actor.arrays(), update.actor.arrays()):
        assert np.array_equal(a, b)
    for a, b in zip(critic.value.arrays(), update.critic.value.arrays()):
        assert np.array_equal(a, b)
    assert update.stats.num_updates == 6
    assert update.opt_state.actor.step == 6
    assert update.stats.clip_frac == 0.0
    assert abs(update.stats.approx_kl) < 1e-12


def test_update_ignores_synthetic_flags():
    actor, critic, batch = _batch(4, n_s=3)
    flat = RolloutBatch(**{**batch.__dict__, "synthetic": np.zeros_like(batch.synthetic)})
    a = ppo_update(actor, critic, batch, PpoHyper(), np.random.default_rng(7))
    b = ppo_update(actor, critic, flat, PpoHyper(), np.random.default_rng(7))
    for x, y in zip(a.actor.arrays(), b.actor.arrays()):
        assert np.array_equal(x, y)
    assert a.stats == b.stats


def test_update_improves_surrogate_on_fixed_batch():
    actor, critic, batch = _batch(5)
    hyper = PpoHyper(lr=1e-3, epochs=1, minibatches=1, entropy_coef=0.0, value_coef=0.0, max_grad_norm=0.0)
    advantages, _ = compute_gae(batch.rewards, batch.values, batch.dones, batch.bootstrap_values, hyper.gamma, hyper.lam)
    adv = advantages.reshape(-1)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    update = ppo_update(actor, critic, batch, hyper, np.random.default_rng(0))
    obs = batch.obs.reshape(-1, 20)
    mean, _ = mlp_forward(update.actor.mean, obs)
    new_log_probs = gaussian_log_prob(batch.actions.reshape(-1, 4), mean, update.actor.log_std)
    ratio = np.exp(new_log_probs - batch.log_probs.reshape(-1))
    assert np.mean(ratio * adv) > np.mean(adv)


def test_hyper_validation():
    with pytest.raises(ConfigError):
        PpoHyper(clip=0.0).validate()
    with pytest.raises(ConfigError):
        PpoHyper(minibatches=0).validate()
