"""
Dyna Augmentation Module

Learned one-step predictive model and the machinery that turns it into
synthetic training data for the on-policy learner.

Pipeline per training iteration:
1. scheduler_ns(i) decides how many synthetic steps N_s to append
2. The simulated dataset D_r (N_r = N - N_s steps per environment) trains the
   model: f(obs_k, a_k) -> [next physical state, reward], MSE in normalized space
3. synth_extend rolls the model forward N_s steps from the observation that
   follows each environment's last simulated step, with actions from the
   current stochastic policy and the command held fixed
4. merge_rollouts appends the synthetic tail to the simulated prefix and
   evaluates the critic, bootstrapping from the final predicted state

Key Features:
- Running mean/std normalizers fitted on simulated data only
- Warm-started model weights and Adam state across iterations
- Synthetic steps never terminate; the critic closes their returns

Typical usage:
    n_s = scheduler_ns(SchedulerConfig(a=0, b=500, x=0, y=2), iteration)
    model, loss = model_train(model, simulated, epochs=10, lr=3e-3, rng=rng)
    synthetic = synth_extend(model, actor, simulated.tail_obs, n_s, rng)
    batch = merge_rollouts(simulated, synthetic, critic, rollout_length=24)
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .env_surrogate import ACTION_DIM, COMMAND_DIM, OBS_DIM, PHYSICAL_DIM, assemble_observation
from .errors import ConfigError, NumericalError, RolloutError
from .nn_core import AdamState, MlpSpec, adam_step, mlp_backward, mlp_forward, mlp_init
from .policy import ActorParams, CriticParams, policy_sample, value_eval
from .ppo import RolloutBatch

logger = logging.getLogger(__name__)

MODEL_INPUT_DIM = OBS_DIM + ACTION_DIM        # 24
MODEL_OUTPUT_DIM = PHYSICAL_DIM + 1           # 14: next physical state + reward
STD_FLOOR = 1e-6
_COMMAND_SLICE = slice(PHYSICAL_DIM, PHYSICAL_DIM + COMMAND_DIM)


@dataclass(frozen=True)
class SchedulerConfig:
    """
    Clamped linear ramp of synthetic steps: x at iteration a, y at iteration b.

    max_synthetic caps y (short-horizon sampling).
    """
    a: int = 0
    b: int = 500
    x: int = 0
    y: int = 0
    max_synthetic: int = 4

    def validate(self, rollout_length: Optional[int] = None) -> "SchedulerConfig":
        if self.a < 0 or self.b < self.a:
            raise ConfigError(f"scheduler needs 0 <= a <= b, got a={self.a}, b={self.b}")
        if not 0 <= self.x <= self.y:
            raise ConfigError(f"scheduler needs 0 <= x <= y, got x={self.x}, y={self.y}")
        if self.y > self.max_synthetic:
            raise ConfigError(f"scheduler.y={self.y} exceeds scheduler.max_synthetic={self.max_synthetic}")
        if rollout_length is not None and self.y >= rollout_length:
            raise ConfigError(f"scheduler.y={self.y} must be < rollout length {rollout_length}")
        return self


@dataclass(frozen=True)
class ModelConfig:
    """Predictive network architecture and per-iteration training schedule."""
    hidden_dims: Tuple[int, ...] = (128, 128, 128, 128)
    activation: str = "elu"
    epochs: int = 10
    lr: float = 3e-3
    minibatch_size: int = 64

    def validate(self) -> "ModelConfig":
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"model.hidden_dims must be positive, got {self.hidden_dims}")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ConfigError("model.epochs and model.minibatch_size must be >= 1")
        if not self.lr >= 0:
            raise ConfigError(f"model.lr must be >= 0, got {self.lr}")
        return self


@dataclass
class NormalizerStats:
    """Running per-dimension mean and (population) variance over `count` samples."""
    count: float
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "NormalizerStats":
        return cls(0.0, np.zeros(dim), np.ones(dim))

    @property
    def std(self) -> np.ndarray:
        return np.maximum(np.sqrt(self.var), STD_FLOOR)


@dataclass
class PredictiveParams:
    """
    Predictive model f(obs, action) -> (next physical state, reward).

    optimizer carries the Adam state between iterations (warm start); it is
    not part of checkpoints.
    """
    network: object
    input_stats: NormalizerStats
    output_stats: NormalizerStats
    optimizer: Optional[AdamState] = None


@dataclass
class TransitionSet:
    """
    Records laid out as (K environments, T steps).

    actions are what was applied (clamped); raw_actions are the pre-clamp
    policy samples with log_probs. next_physical/next_obs describe the state
    each record led to (the terminal state for finished episodes); tail_obs is
    the observation the next step starts from (post-reset where applicable).
    """
    obs: np.ndarray
    actions: np.ndarray
    raw_actions: np.ndarray
    log_probs: np.ndarray
    next_physical: np.ndarray
    next_obs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    synthetic: np.ndarray
    tail_obs: np.ndarray

    @property
    def num_envs(self) -> int:
        return self.rewards.shape[0]

    @property
    def length(self) -> int:
        return self.rewards.shape[1]

    @classmethod
    def allocate(cls, num_envs: int, length: int, synthetic: bool,
                 tail_obs: Optional[np.ndarray] = None) -> "TransitionSet":
        k, t = num_envs, length
        return cls(
            obs=np.zeros((k, t, OBS_DIM)),
            actions=np.zeros((k, t, ACTION_DIM)),
            raw_actions=np.zeros((k, t, ACTION_DIM)),
            log_probs=np.zeros((k, t)),
            next_physical=np.zeros((k, t, PHYSICAL_DIM)),
            next_obs=np.zeros((k, t, OBS_DIM)),
            rewards=np.zeros((k, t)),
            dones=np.zeros((k, t), dtype=bool),
            synthetic=np.full((k, t), synthetic, dtype=bool),
            tail_obs=np.zeros((k, OBS_DIM)) if tail_obs is None else np.array(tail_obs, dtype=np.float64),
        )

    def model_inputs(self) -> np.ndarray:
        return np.concatenate([self.obs, self.actions], axis=-1).reshape(-1, MODEL_INPUT_DIM)

    def model_targets(self) -> np.ndarray:
        return np.concatenate([self.next_physical, self.rewards[..., None]], axis=-1).reshape(-1, MODEL_OUTPUT_DIM)


def scheduler_ns(cfg: SchedulerConfig, i: int) -> int:
    """
    Number of synthetic steps for iteration i.

    round(min(max(x + (i - a) / (b - a) * (y - x), x), y)), with halves rounded
    up; when a == b the ramp is a step from x to y at iteration b.

    Raises:
        ConfigError: If the scheduler config is invalid or i < 0
    """
    cfg.validate()
    if i < 0:
        raise ConfigError(f"iteration index must be >= 0, got {i}")
    if cfg.b == cfg.a:
        return cfg.y if i >= cfg.b else cfg.x
    value = cfg.x + (i - cfg.a) / (cfg.b - cfg.a) * (cfg.y - cfg.x)
    value = min(max(value, cfg.x), cfg.y)
    return int(math.floor(value + 0.5))


def normalizer_fit(stats: NormalizerStats, data) -> NormalizerStats:
    """
    Merge a batch into running statistics (parallel mean/variance update).

    Args:
        stats: Current statistics (NormalizerStats.identity(dim) before any data)
        data: Array (M, dim)

    Returns:
        New NormalizerStats; the input is not modified
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != stats.mean.shape[0] or x.shape[0] == 0:
        raise ValueError(f"cannot fit normalizer of width {stats.mean.shape[0]} on data of shape {x.shape}")
    n = float(x.shape[0])
    batch_mean = x.mean(axis=0)
    batch_var = x.var(axis=0)
    if stats.count == 0:
        return NormalizerStats(n, batch_mean, batch_var)
    total = stats.count + n
    delta = batch_mean - stats.mean
    mean = stats.mean + delta * (n / total)
    m2 = stats.var * stats.count + batch_var * n + delta * delta * (stats.count * n / total)
    return NormalizerStats(total, mean, m2 / total)


def normalizer_apply(stats: NormalizerStats, data) -> np.ndarray:
    return (np.asarray(data, dtype=np.float64) - stats.mean) / stats.std


def normalizer_invert(stats: NormalizerStats, data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64) * stats.std + stats.mean


def model_init(config: ModelConfig, seed: int) -> PredictiveParams:
    spec = MlpSpec(MODEL_INPUT_DIM, tuple(config.hidden_dims), MODEL_OUTPUT_DIM, config.activation)
    return PredictiveParams(
        network=mlp_init(spec, seed),
        input_stats=NormalizerStats.identity(MODEL_INPUT_DIM),
        output_stats=NormalizerStats.identity(MODEL_OUTPUT_DIM),
    )


def model_predict(params: PredictiveParams, obs, action) -> Tuple[np.ndarray, np.ndarray]:
    """
    Predict next physical state and reward.

    Args:
        params: Predictive model
        obs: Observations (B, 20) or (20,)
        action: Applied actions (B, 4) or (4,)

    Returns:
        Tuple of (next physical state (B, 13), reward (B,) clamped to >= 0);
        unbatched inputs give ((13,), float)

    Raises:
        NumericalError: If an input is NaN or infinite
    """
    single = np.ndim(obs) == 1
    x = np.concatenate([np.atleast_2d(obs), np.atleast_2d(action)], axis=-1).astype(np.float64)
    if x.shape[1] != MODEL_INPUT_DIM:
        raise ValueError(f"model input width {x.shape[1]} != {MODEL_INPUT_DIM}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite input to predictive model")
    out, _ = mlp_forward(params.network, normalizer_apply(params.input_stats, x))
    out = normalizer_invert(params.output_stats, out)
    state = out[:, :PHYSICAL_DIM]
    reward = np.maximum(out[:, PHYSICAL_DIM], 0.0)
    if single:
        return state[0], float(reward[0])
    return state, reward


def model_train(params: PredictiveParams, data: TransitionSet, epochs: int, lr: float,
                rng: np.random.Generator, minibatch_size: int = 64,
                on_epoch: Optional[Callable[[int, float], None]] = None) -> Tuple[PredictiveParams, float]:
    """
    Fit the model on simulated transitions with minibatch Adam.

    Normalizers are updated from the data first; the loss is the mean over
    records of the squared error between normalized targets and network output.

    Args:
        params: Current model (warm start)
        data: Simulated TransitionSet
        epochs: Passes over the data
        lr: Adam learning rate
        rng: Generator for shuffling
        minibatch_size: Records per Adam step
        on_epoch: Optional callback called with (epoch, epoch mean loss)

    Returns:
        Tuple of (updated model, mean loss of the final epoch)

    Raises:
        RolloutError: If the dataset is empty or contains synthetic records
        NumericalError: If the loss becomes non-finite
    """
    if data.num_envs == 0 or data.length == 0:
        raise RolloutError("cannot train the predictive model on an empty dataset")
    if np.any(data.synthetic):
        raise RolloutError("predictive model must be trained on simulated transitions only")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")

    inputs = data.model_inputs()
    targets = data.model_targets()
    input_stats = normalizer_fit(params.input_stats, inputs)
    output_stats = normalizer_fit(params.output_stats, targets)
    x = normalizer_apply(input_stats, inputs)
    y = normalizer_apply(output_stats, targets)

    network = params.network
    optimizer = params.optimizer or AdamState.zeros_like(network.arrays())
    total = x.shape[0]
    epoch_loss = float("nan")
    for epoch in range(epochs):
        order = rng.permutation(total)
        loss_sum = 0.0
        for start in range(0, total, minibatch_size):
            idx = order[start:start + minibatch_size]
            pred, cache = mlp_forward(network, x[idx])
            err = pred - y[idx]
            batch_loss = float(np.sum(err * err)) / idx.size
            if not np.isfinite(batch_loss):
                raise NumericalError(f"non-finite predictive-model loss at epoch {epoch}")
            grads, _ = mlp_backward(network, cache, (2.0 / idx.size) * err)
            network, optimizer = adam_step(network, grads, optimizer, lr)
            loss_sum += batch_loss * idx.size
        epoch_loss = loss_sum / total
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)

    logger.debug(f"Predictive model: {total} records, {epochs} epochs, final loss {epoch_loss:.5f}")
    return PredictiveParams(network, input_stats, output_stats, optimizer), epoch_loss


def synth_extend(model: PredictiveParams, actor: ActorParams, tail_obs, n_s: int,
                 rng: np.random.Generator, deterministic: bool = False) -> TransitionSet:
    """
    Roll the model forward n_s steps from each environment's tail observation.

    Args:
        model: Predictive model
        actor: Current policy
        tail_obs: Observations following the last simulated step, (K, 20)
        n_s: Number of synthetic steps (0 gives an empty set)
        rng: Generator for policy sampling
        deterministic: Use the mean action instead of sampling

    Returns:
        TransitionSet of shape (K, n_s) with synthetic=True and done=False
    """
    tail_obs = np.atleast_2d(np.asarray(tail_obs, dtype=np.float64))
    if tail_obs.shape[1] != OBS_DIM or actor.mean.spec.input_dim != OBS_DIM:
        raise ValueError("actor and tail observations must both be 20 wide")
    if model.network.spec.input_dim != MODEL_INPUT_DIM or model.network.spec.output_dim != MODEL_OUTPUT_DIM:
        raise ValueError("predictive model must map 24 inputs to 14 outputs")
    if n_s < 0:
        raise ValueError(f"n_s must be >= 0, got {n_s}")

    k = tail_obs.shape[0]
    out = TransitionSet.allocate(k, n_s, synthetic=True, tail_obs=tail_obs)
    obs = tail_obs.copy()
    command = obs[:, _COMMAND_SLICE].copy()
    for t in range(n_s):
        raw, log_probs = policy_sample(actor, obs, rng, deterministic)
        applied = np.clip(raw, -1.0, 1.0)
        next_physical, reward = model_predict(model, obs, applied)
        next_obs = assemble_observation(next_physical, command, applied)
        out.obs[:, t] = obs
        out.actions[:, t] = applied
        out.raw_actions[:, t] = raw
        out.log_probs[:, t] = log_probs
        out.next_physical[:, t] = next_physical
        out.next_obs[:, t] = next_obs
        out.rewards[:, t] = reward
        obs = next_obs
    out.tail_obs = obs
    return out


def merge_rollouts(simulated: TransitionSet, synthetic: TransitionSet, critic: CriticParams,
                   rollout_length: Optional[int] = None) -> RolloutBatch:
    """
    Concatenate the simulated prefix and synthetic suffix of every row.

    Values come from the critic; the bootstrap value is taken at the synthetic
    tail observation (or at the simulated tail when there is no synthetic part).

    Raises:
        RolloutError: On K mismatch, N_r + N_s != rollout_length, or when the
            synthetic segment does not start where the simulated one ended
    """
    k = simulated.num_envs
    if synthetic.num_envs != k:
        raise RolloutError(f"simulated has {k} rows but synthetic has {synthetic.num_envs}")
    if np.any(simulated.synthetic) or not np.all(synthetic.synthetic):
        raise RolloutError("simulated/synthetic flags are mixed up")
    n = simulated.length + synthetic.length
    if rollout_length is not None and n != rollout_length:
        raise RolloutError(f"N_r + N_s = {simulated.length} + {synthetic.length} != rollout length {rollout_length}")
    if synthetic.length > 0 and not np.array_equal(synthetic.obs[:, 0], simulated.tail_obs):
        raise RolloutError("synthetic segment does not continue from the last simulated step")

    obs = np.concatenate([simulated.obs, synthetic.obs], axis=1)
    tail = synthetic.tail_obs if synthetic.length > 0 else simulated.tail_obs
    values = value_eval(critic, obs.reshape(-1, OBS_DIM)).reshape(k, n)
    batch = RolloutBatch(
        obs=obs,
        actions=np.concatenate([simulated.raw_actions, synthetic.raw_actions], axis=1),
        log_probs=np.concatenate([simulated.log_probs, synthetic.log_probs], axis=1),
        rewards=np.concatenate([simulated.rewards, synthetic.rewards], axis=1),
        dones=np.concatenate([simulated.dones, synthetic.dones], axis=1),
        values=values,
        synthetic=np.concatenate([simulated.synthetic, synthetic.synthetic], axis=1),
        bootstrap_values=value_eval(critic, tail),
    )
    return batch.validate()
