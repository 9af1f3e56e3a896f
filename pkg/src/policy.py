"""
Policy Module

Gaussian actor and value critic over 20-wide observations.

The actor is a mean network plus a state-independent log standard deviation;
actions are sampled from N(mean, diag(exp(log_std))^2) and clamped to
[-1, 1] only after the log-density of the raw sample has been evaluated.
Callers that need the ratio of new to old densities (the PPO update) keep the
raw sample; the environment and the predictive model receive the clamped one.

Typical usage:
    actor = actor_init(PolicyConfig(), seed=1)
    critic = critic_init(PolicyConfig(), seed=2)
    actions, log_probs = policy_act(actor, obs, rng, deterministic=False)
    values = value_eval(critic, obs)
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .env_surrogate import ACTION_DIM, OBS_DIM
from .errors import ConfigError, NumericalError
from .nn_core import MlpParams, MlpSpec, mlp_forward, mlp_init

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_HALF_LOG_2PIE = 0.5 * np.log(2.0 * np.pi * np.e)


@dataclass(frozen=True)
class PolicyConfig:
    """Actor/critic architecture and initial exploration level."""
    hidden_dims: Tuple[int, ...] = (128, 128)
    activation: str = "elu"
    init_log_std: float = float(np.log(0.5))

    def validate(self) -> "PolicyConfig":
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"policy.hidden_dims must be positive, got {self.hidden_dims}")
        if not LOG_STD_MIN <= self.init_log_std <= LOG_STD_MAX:
            raise ConfigError(f"policy.init_log_std must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]")
        return self


@dataclass
class ActorParams:
    """Mean network (20 -> 4) and log_std vector (4,)."""
    mean: MlpParams
    log_std: np.ndarray

    def arrays(self) -> List[np.ndarray]:
        return self.mean.arrays() + [self.log_std]

    @classmethod
    def from_arrays(cls, spec: MlpSpec, arrays: Sequence[np.ndarray]) -> "ActorParams":
        log_std = np.clip(np.asarray(arrays[-1], dtype=np.float64).reshape(ACTION_DIM), LOG_STD_MIN, LOG_STD_MAX)
        return cls(MlpParams.from_arrays(spec, arrays[:-1]), log_std)


@dataclass
class CriticParams:
    """Value network (20 -> 1)."""
    value: MlpParams


def actor_init(config: PolicyConfig, seed: int) -> ActorParams:
    spec = MlpSpec(OBS_DIM, tuple(config.hidden_dims), ACTION_DIM, config.activation)
    return ActorParams(mlp_init(spec, seed), np.full(ACTION_DIM, config.init_log_std, dtype=np.float64))


def critic_init(config: PolicyConfig, seed: int) -> CriticParams:
    spec = MlpSpec(OBS_DIM, tuple(config.hidden_dims), 1, config.activation)
    return CriticParams(mlp_init(spec, seed))


def _as_batch(obs) -> np.ndarray:
    x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if x.shape[-1] != OBS_DIM:
        raise ValueError(f"observation width {x.shape[-1]} != {OBS_DIM}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite observation")
    return x


def gaussian_log_prob(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density summed over action dimensions, one value per row."""
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - actions.shape[-1] * _HALF_LOG_2PI


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std + _HALF_LOG_2PIE))


def policy_sample(actor: ActorParams, obs, rng: np.random.Generator,
                  deterministic: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw unclamped actions and their log-densities.

    Returns:
        Tuple of (raw actions (B, 4), log_probs (B,))
    """
    x = _as_batch(obs)
    mean, _ = mlp_forward(actor.mean, x)
    if deterministic:
        raw = mean
    else:
        raw = mean + np.exp(actor.log_std) * rng.standard_normal(mean.shape)
    return raw, gaussian_log_prob(raw, mean, actor.log_std)


def policy_act(actor: ActorParams, obs, rng: np.random.Generator,
               deterministic: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Choose actions for a batch of observations.

    Args:
        actor: Actor parameters
        obs: Observations (B, 20) or a single (20,) vector
        rng: Generator for the Gaussian draw (unused when deterministic)
        deterministic: Return the mean action instead of sampling

    Returns:
        Tuple of (actions clamped to [-1, 1], log_probs of the pre-clamp sample)

    Raises:
        NumericalError: If an observation is NaN or infinite
    """
    raw, log_probs = policy_sample(actor, obs, rng, deterministic)
    return np.clip(raw, -1.0, 1.0), log_probs


def policy_logprob_entropy(actor: ActorParams, obs, actions) -> Tuple[np.ndarray, np.ndarray]:
    """Log-density of given actions and the (state-independent) entropy, one per row."""
    x = _as_batch(obs)
    a = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    if a.shape != (x.shape[0], ACTION_DIM):
        raise ValueError(f"actions shape {a.shape} does not match ({x.shape[0]}, {ACTION_DIM})")
    mean, _ = mlp_forward(actor.mean, x)
    entropy = np.full(x.shape[0], gaussian_entropy(actor.log_std))
    return gaussian_log_prob(a, mean, actor.log_std), entropy


def value_eval(critic: CriticParams, obs) -> np.ndarray:
    values, _ = mlp_forward(critic.value, _as_batch(obs))
    return values[:, 0]
