"""
PPO Update Module

Generalized advantage estimation over fixed-length rollouts (which may end
in a synthetic tail) and the clipped-surrogate actor/critic update.

Key Concepts:
- GAE: delta_t = r_t + gamma (1 - done_t) V_{t+1} - V_t,
       A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}
- The synthetic flag never enters the advantage computation
- Advantages are normalized per batch inside ppo_update only
- Gradients are exact (hand-derived through the Gaussian density and
  back-propagated with nn_core), clipped by global norm, applied with Adam

Typical usage:
    advantages, returns = compute_gae(rewards, values, dones, bootstrap, 0.99, 0.95)
    update = ppo_update(actor, critic, batch, PpoHyper(), rng, opt_state)
    actor, critic, stats, opt_state = update
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .env_surrogate import ACTION_DIM, OBS_DIM
from .errors import ConfigError, NumericalError, RolloutError
from .nn_core import AdamState, MlpParams, adam_update, clip_by_global_norm, mlp_backward, mlp_forward
from .policy import LOG_STD_MAX, LOG_STD_MIN, ActorParams, CriticParams, gaussian_entropy, gaussian_log_prob

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PpoHyper:
    """
    PPO hyperparameters.

    Args:
        gamma: Discount factor in [0, 1]
        lam: GAE parameter in [0, 1]
        clip: Ratio clipping range epsilon (> 0)
        epochs: Passes over the batch per update
        minibatches: Minibatches per pass
        lr: Adam learning rate for actor and critic
        value_coef: Weight of the value loss
        entropy_coef: Weight of the entropy bonus
        max_grad_norm: Global gradient-norm clip (<= 0 disables)
    """
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    lr: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.005
    max_grad_norm: float = 1.0

    def validate(self) -> "PpoHyper":
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ConfigError(f"ppo.gamma and ppo.lam must lie in [0, 1], got {self.gamma}, {self.lam}")
        if not self.clip > 0:
            raise ConfigError(f"ppo.clip must be > 0, got {self.clip}")
        if self.epochs < 1 or self.minibatches < 1:
            raise ConfigError("ppo.epochs and ppo.minibatches must be >= 1")
        if self.lr < 0 or self.value_coef < 0 or self.entropy_coef < 0:
            raise ConfigError("ppo.lr, ppo.value_coef and ppo.entropy_coef must be >= 0")
        return self


@dataclass
class RolloutBatch:
    """
    K environments x N steps of mixed simulated/synthetic data.

    actions are the raw (pre-clamp) policy samples whose log-densities are
    stored in log_probs. bootstrap_values closes the return after step N.
    """
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    synthetic: np.ndarray
    bootstrap_values: np.ndarray

    @property
    def num_envs(self) -> int:
        return self.rewards.shape[0]

    @property
    def length(self) -> int:
        return self.rewards.shape[1]

    def validate(self) -> "RolloutBatch":
        """
        Check shapes and the tail-only augmentation layout.

        Raises:
            RolloutError: On shape mismatch, non-suffix synthetic flags or a
                done flag inside the synthetic tail
        """
        k, n = self.rewards.shape
        expected = {
            "obs": (k, n, OBS_DIM), "actions": (k, n, ACTION_DIM), "log_probs": (k, n),
            "dones": (k, n), "values": (k, n), "synthetic": (k, n), "bootstrap_values": (k,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise RolloutError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not synthetic_is_suffix(self.synthetic):
            raise RolloutError("synthetic steps must form a contiguous suffix of every row")
        if np.any(self.dones & self.synthetic):
            raise RolloutError("synthetic steps cannot terminate an episode")
        return self


class PpoStats(NamedTuple):
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_frac: float
    grad_norm: float
    num_updates: int


class PpoOptState(NamedTuple):
    actor: AdamState
    critic: AdamState


class PpoUpdate(NamedTuple):
    actor: ActorParams
    critic: CriticParams
    stats: PpoStats
    opt_state: PpoOptState


def synthetic_is_suffix(flags: np.ndarray) -> bool:
    flags = np.asarray(flags, dtype=bool)
    if flags.shape[-1] < 2:
        return True
    return bool(np.all(flags[..., 1:] >= flags[..., :-1]))


def compute_gae(rewards, values, dones, bootstrap_values, gamma: float,
                lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Generalized advantage estimation, computed backwards over each row.

    Args:
        rewards, values, dones: Arrays of shape (K, N)
        bootstrap_values: V of the state after step N, shape (K,)
        gamma: Discount in [0, 1]
        lam: GAE parameter in [0, 1]

    Returns:
        Tuple of (raw advantages, returns = advantages + values), both (K, N)

    Raises:
        RolloutError: On shape mismatch
        ConfigError: If gamma or lam lie outside [0, 1]
    """
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ConfigError(f"gamma and lam must lie in [0, 1], got {gamma}, {lam}")
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    bootstrap = np.asarray(bootstrap_values, dtype=np.float64)
    if rewards.ndim != 2 or values.shape != rewards.shape or not_done.shape != rewards.shape:
        raise RolloutError(f"rewards/values/dones must share a (K, N) shape, got "
                           f"{rewards.shape}, {values.shape}, {not_done.shape}")
    if bootstrap.shape != (rewards.shape[0],):
        raise RolloutError(f"bootstrap_values must have shape ({rewards.shape[0]},), got {bootstrap.shape}")

    n = rewards.shape[1]
    advantages = np.zeros_like(rewards)
    next_value = bootstrap
    running = np.zeros(rewards.shape[0])
    for t in range(n - 1, -1, -1):
        delta = rewards[:, t] + gamma * not_done[:, t] * next_value - values[:, t]
        running = delta + gamma * lam * not_done[:, t] * running
        advantages[:, t] = running
        next_value = values[:, t]
    return advantages, advantages + values


def clipped_surrogate(ratio, advantages, clip: float) -> np.ndarray:
    """min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A), elementwise."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    return np.minimum(ratio * advantages, np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages)


def ppo_loss_and_grads(actor: ActorParams, critic: CriticParams, obs: np.ndarray, actions: np.ndarray,
                       old_log_probs: np.ndarray, advantages: np.ndarray, returns: np.ndarray,
                       hyper: PpoHyper) -> Tuple[Dict[str, float], List[np.ndarray], List[np.ndarray]]:
    """
    Loss terms and exact gradients for one minibatch.

    The minimized loss is
        -mean(clipped surrogate) + value_coef * mean((V - R)^2) - entropy_coef * entropy

    Returns:
        Tuple of (loss terms, actor gradients in ActorParams.arrays() order,
        critic gradients in MlpParams.arrays() order)
    """
    batch = obs.shape[0]
    mean, actor_cache = mlp_forward(actor.mean, obs)
    log_std = actor.log_std
    log_probs = gaussian_log_prob(actions, mean, log_std)
    ratio = np.exp(log_probs - old_log_probs)
    surr_unclipped = ratio * advantages
    surr_clipped = np.clip(ratio, 1.0 - hyper.clip, 1.0 + hyper.clip) * advantages
    policy_loss = -float(np.mean(np.minimum(surr_unclipped, surr_clipped)))

    value_out, critic_cache = mlp_forward(critic.value, obs)
    values = value_out[:, 0]
    value_err = values - returns
    value_loss = float(np.mean(value_err * value_err))
    entropy = gaussian_entropy(log_std)
    total = policy_loss + hyper.value_coef * value_loss - hyper.entropy_coef * entropy

    # surrogate gradient flows only where the unclipped branch is the minimum
    active = (surr_unclipped <= surr_clipped).astype(np.float64)
    d_log_prob = -(advantages * ratio * active) / batch
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mean
    d_mean = d_log_prob[:, None] * diff * inv_var
    d_log_std = np.sum(d_log_prob[:, None] * (diff * diff * inv_var - 1.0), axis=0) - hyper.entropy_coef
    mean_grads, _ = mlp_backward(actor.mean, actor_cache, d_mean)
    d_value = (2.0 * hyper.value_coef / batch) * value_err[:, None]
    critic_grads, _ = mlp_backward(critic.value, critic_cache, d_value)

    terms = {
        "loss": total,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "approx_kl": float(np.mean(old_log_probs - log_probs)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > hyper.clip)),
    }
    return terms, mean_grads.arrays() + [d_log_std], critic_grads.arrays()


def init_opt_state(actor: ActorParams, critic: CriticParams) -> PpoOptState:
    return PpoOptState(AdamState.zeros_like(actor.arrays()), AdamState.zeros_like(critic.value.arrays()))


def ppo_update(actor: ActorParams, critic: CriticParams, batch: RolloutBatch, hyper: PpoHyper,
               rng: np.random.Generator, opt_state: Optional[PpoOptState] = None) -> PpoUpdate:
    """
    Clipped-surrogate update over shuffled minibatches.

    Args:
        actor: Current actor
        critic: Current critic
        batch: Rollout batch (validated here)
        hyper: PPO hyperparameters
        rng: Generator for minibatch shuffling
        opt_state: Adam states carried across updates (fresh when None)

    Returns:
        PpoUpdate(actor, critic, stats, opt_state); stats average over all minibatch steps

    Raises:
        NumericalError: If a minibatch loss is not finite
    """
    batch.validate()
    hyper.validate()
    opt_state = opt_state or init_opt_state(actor, critic)

    advantages, returns = compute_gae(batch.rewards, batch.values, batch.dones,
                                      batch.bootstrap_values, hyper.gamma, hyper.lam)
    obs = batch.obs.reshape(-1, OBS_DIM)
    actions = batch.actions.reshape(-1, ACTION_DIM)
    old_log_probs = batch.log_probs.reshape(-1)
    returns = returns.reshape(-1)
    advantages = advantages.reshape(-1)
    advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    spec_actor = actor.mean.spec
    spec_critic = critic.value.spec
    actor_arrays = actor.arrays()
    critic_arrays = critic.value.arrays()
    n_actor = len(actor_arrays)
    sums: Dict[str, float] = {}
    norms = []
    updates = 0
    total = obs.shape[0]

    for _ in range(hyper.epochs):
        order = rng.permutation(total)
        for idx in np.array_split(order, hyper.minibatches):
            if idx.size == 0:
                continue
            current_actor = ActorParams(MlpParams.from_arrays(spec_actor, actor_arrays[:-1]), actor_arrays[-1])
            current_critic = CriticParams(MlpParams.from_arrays(spec_critic, critic_arrays))
            terms, actor_grads, critic_grads = ppo_loss_and_grads(
                current_actor, current_critic, obs[idx], actions[idx], old_log_probs[idx],
                advantages[idx], returns[idx], hyper,
            )
            if not np.isfinite(terms["loss"]):
                raise NumericalError(f"non-finite PPO loss {terms['loss']} at update {updates}")
            grads, norm = clip_by_global_norm(actor_grads + critic_grads, hyper.max_grad_norm)
            actor_arrays, actor_state = adam_update(actor_arrays, grads[:n_actor], opt_state.actor, hyper.lr)
            critic_arrays, critic_state = adam_update(critic_arrays, grads[n_actor:], opt_state.critic, hyper.lr)
            actor_arrays[-1] = np.clip(actor_arrays[-1], LOG_STD_MIN, LOG_STD_MAX)
            opt_state = PpoOptState(actor_state, critic_state)

            for key, value in terms.items():
                sums[key] = sums.get(key, 0.0) + value
            norms.append(norm)
            updates += 1

    new_actor = ActorParams(MlpParams.from_arrays(spec_actor, actor_arrays[:-1]), actor_arrays[-1])
    new_critic = CriticParams(MlpParams.from_arrays(spec_critic, critic_arrays))
    stats = PpoStats(
        policy_loss=sums["policy_loss"] / updates,
        value_loss=sums["value_loss"] / updates,
        entropy=sums["entropy"] / updates,
        approx_kl=sums["approx_kl"] / updates,
        clip_frac=sums["clip_frac"] / updates,
        grad_norm=float(np.mean(norms)),
        num_updates=updates,
    )
    logger.debug(f"PPO update: {updates} steps, policy loss {stats.policy_loss:.4f}, "
                 f"value loss {stats.value_loss:.4f}, kl {stats.approx_kl:.5f}")
    return PpoUpdate(new_actor, new_critic, stats, opt_state)
