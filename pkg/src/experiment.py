"""
Experiment Module

End-to-end training loop, rollout-length ablation, preset comparison,
steps-to-threshold metrics and the command-tracking evaluation.

Training loop (one iteration):
1. N_s = scheduler_ns(i), N_r = N - N_s
2. Collect N_r simulated steps in each of K environments
3. Train the predictive model on those steps and roll it forward N_s steps
   (skipped entirely when scheduler.y == 0, the plain PPO baseline)
4. Merge, compute advantages and run the PPO update
5. Record one metrics row; checkpoint every `checkpoint_every` iterations

Key Features:
- Independent seeded RNG streams per consumer (environments, policy, PPO,
  model training, synthesis): a fixed seed gives byte-identical metrics
- Episode returns tracked only on the simulated stream
- Abort checkpoint of the last good state on numerical failure
- Ablation and preset comparison runs can be queued on a RunProcessor

Typical usage:
    result = train_run(TrainConfig(seed=1, scheduler=SchedulerConfig(y=2)))
    steps = steps_to_threshold(result.metrics, threshold=150.0)
    table = ablate_rollout_lengths(base, [16, 20, 24], seeds=[0, 1, 2], threshold=150.0)
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .checkpoint import save_checkpoint
from .dyna import (
    ModelConfig,
    PredictiveParams,
    SchedulerConfig,
    TransitionSet,
    merge_rollouts,
    model_init,
    model_train,
    scheduler_ns,
    synth_extend,
)
from .env_surrogate import EnvParams, StepResult, env_reset, env_step, reset_all, vector_env_step
from .errors import ConfigError, NumericalError
from .policy import ActorParams, CriticParams, PolicyConfig, actor_init, critic_init, policy_act, policy_sample
from .ppo import PpoHyper, PpoOptState, ppo_update

if TYPE_CHECKING:
    from .background_processor import RunProcessor

logger = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "iter", "n_r", "n_s", "sim_steps_cum", "syn_steps_cum", "mean_return", "task_return",
    "model_loss", "policy_loss", "value_loss", "clip_frac", "wall_s",
]
HEATMAP_COLUMNS = ["vx_cmd", "wz_cmd", "mae_vx", "mae_wz", "mae_total", "falls"]
METRICS_FILE = "metrics.csv"


@dataclass(frozen=True)
class TrainConfig:
    """
    Everything one training run depends on.

    total_steps counts simulated plus synthetic steps. threshold is the
    reward level used for steps-to-threshold reporting (None when uncalibrated).
    checkpoint_every = 0 disables periodic checkpoints. output_dir = ''
    keeps the run in memory.
    """
    seed: int = 0
    num_envs: int = 16
    rollout_length: int = 24
    total_steps: int = 2_000_000
    checkpoint_every: int = 50
    log_every: int = 10
    threshold: Optional[float] = None
    record_wall_clock: bool = False
    output_dir: str = ""
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    env: EnvParams = field(default_factory=EnvParams)
    ppo: PpoHyper = field(default_factory=PpoHyper)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    @property
    def steps_per_iteration(self) -> int:
        return self.num_envs * self.rollout_length

    @property
    def num_iterations(self) -> int:
        return math.ceil(self.total_steps / self.steps_per_iteration)

    @property
    def uses_model(self) -> bool:
        return self.scheduler.y > 0

    def validate(self) -> "TrainConfig":
        """
        Raises:
            ConfigError: If any field or sub-config is out of range
        """
        if self.num_envs < 1 or self.rollout_length < 1:
            raise ConfigError(f"num_envs and rollout_length must be >= 1, got {self.num_envs}, {self.rollout_length}")
        if self.total_steps < self.steps_per_iteration:
            raise ConfigError(
                f"total_steps={self.total_steps} is smaller than one iteration "
                f"({self.num_envs} x {self.rollout_length} = {self.steps_per_iteration})"
            )
        if self.checkpoint_every < 0 or self.log_every < 1:
            raise ConfigError("checkpoint_every must be >= 0 and log_every >= 1")
        if self.threshold is not None and not math.isfinite(self.threshold):
            raise ConfigError(f"threshold must be finite, got {self.threshold}")
        self.scheduler.validate(self.rollout_length)
        self.env.validate()
        self.ppo.validate()
        self.policy.validate()
        self.model.validate()
        return self


@dataclass
class IterationMetrics:
    iter: int
    n_r: int
    n_s: int
    sim_steps_cum: int
    syn_steps_cum: int
    mean_return: float
    task_return: float
    model_loss: float
    policy_loss: float
    value_loss: float
    clip_frac: float
    wall_s: float


@dataclass
class TrainResult:
    """Metrics table (METRICS_COLUMNS) plus final networks and written checkpoints."""
    metrics: pd.DataFrame
    checkpoints: List[Path]
    actor: ActorParams
    critic: CriticParams
    model: Optional[PredictiveParams]


def metrics_frame(series: Union[pd.DataFrame, Sequence[IterationMetrics]]) -> pd.DataFrame:
    if isinstance(series, pd.DataFrame):
        return series
    return pd.DataFrame([asdict(m) for m in series], columns=METRICS_COLUMNS)


def write_metrics_csv(metrics: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metrics[METRICS_COLUMNS].to_csv(path, index=False)
    return path


class DynaTrainer:
    """
    Stateful training loop for one run.

    Attributes:
        config: Validated TrainConfig
        actor, critic, model: Current networks (model is None for the baseline)
        metrics: IterationMetrics recorded so far
    """

    def __init__(self, config: TrainConfig):
        self.config = config.validate()
        streams = np.random.SeedSequence(config.seed).spawn(7 + config.num_envs)
        seeds = [int(s.generate_state(1)[0]) for s in streams[:3]]
        self.actor = actor_init(config.policy, seeds[0])
        self.critic = critic_init(config.policy, seeds[1])
        self.model = model_init(config.model, seeds[2]) if config.uses_model else None
        self.policy_rng = np.random.default_rng(streams[3])
        self.ppo_rng = np.random.default_rng(streams[4])
        self.model_rng = np.random.default_rng(streams[5])
        self.synth_rng = np.random.default_rng(streams[6])
        self.env_rngs = [np.random.default_rng(s) for s in streams[7:]]
        self.opt_state: Optional[PpoOptState] = None

        self.states, self.commands, self.obs = reset_all(config.env, self.env_rngs)
        self.episode_return = np.zeros(config.num_envs)
        self.episode_task_return = np.zeros(config.num_envs)
        self.last_mean_return = float("nan")
        self.last_task_return = float("nan")
        self.sim_steps = 0
        self.syn_steps = 0
        self.iteration = 0
        self.metrics: List[IterationMetrics] = []
        self.checkpoints: List[Path] = []
        self.output_dir = Path(config.output_dir) if config.output_dir else None

    @property
    def total_steps(self) -> int:
        return self.sim_steps + self.syn_steps

    def collect(self, n_r: int) -> Tuple[TransitionSet, List[float], List[float]]:
        """
        Run the current policy for n_r steps in every environment.

        Returns:
            Tuple of (simulated TransitionSet, returns of episodes completed,
            task-only returns of the same episodes)
        """
        env = self.config.env
        data = TransitionSet.allocate(self.config.num_envs, n_r, synthetic=False)
        finished, finished_task = [], []
        for t in range(n_r):
            raw, log_probs = policy_sample(self.actor, self.obs, self.policy_rng)
            applied = np.clip(raw, -1.0, 1.0)
            result = vector_env_step(env, self.states, self.commands, applied, self.env_rngs)
            step = result.step
            data.obs[:, t] = self.obs
            data.actions[:, t] = applied
            data.raw_actions[:, t] = raw
            data.log_probs[:, t] = log_probs
            data.next_physical[:, t] = step.next_state.physical()
            data.next_obs[:, t] = step.obs
            data.rewards[:, t] = step.reward
            data.dones[:, t] = step.done

            self.episode_return += step.reward
            self.episode_task_return += step.reward_task
            for i in np.flatnonzero(result.reset_mask):
                finished.append(float(self.episode_return[i]))
                finished_task.append(float(self.episode_task_return[i]))
                self.episode_return[i] = 0.0
                self.episode_task_return[i] = 0.0
            self.states, self.commands, self.obs = result.states, result.commands, result.obs
        data.tail_obs = self.obs.copy()
        return data, finished, finished_task

    def step(self) -> IterationMetrics:
        """Run one training iteration and return its metrics row."""
        config = self.config
        started = time.perf_counter()
        i = self.iteration
        n_s = scheduler_ns(config.scheduler, i)
        n_r = config.rollout_length - n_s

        simulated, finished, finished_task = self.collect(n_r)
        model_loss = float("nan")
        if self.model is not None:
            self.model, model_loss = model_train(
                self.model, simulated, config.model.epochs, config.model.lr, self.model_rng,
                minibatch_size=config.model.minibatch_size,
            )
            synthetic = synth_extend(self.model, self.actor, simulated.tail_obs, n_s, self.synth_rng)
        else:
            synthetic = TransitionSet.allocate(config.num_envs, 0, synthetic=True, tail_obs=simulated.tail_obs)

        batch = merge_rollouts(simulated, synthetic, self.critic, config.rollout_length)
        update = ppo_update(self.actor, self.critic, batch, config.ppo, self.ppo_rng, self.opt_state)
        self.actor, self.critic, self.opt_state = update.actor, update.critic, update.opt_state

        if finished:
            self.last_mean_return = float(np.mean(finished))
            self.last_task_return = float(np.mean(finished_task))
        self.sim_steps += config.num_envs * n_r
        self.syn_steps += config.num_envs * n_s
        row = IterationMetrics(
            iter=i,
            n_r=n_r,
            n_s=n_s,
            sim_steps_cum=self.sim_steps,
            syn_steps_cum=self.syn_steps,
            mean_return=self.last_mean_return,
            task_return=self.last_task_return,
            model_loss=model_loss,
            policy_loss=update.stats.policy_loss,
            value_loss=update.stats.value_loss,
            clip_frac=update.stats.clip_frac,
            wall_s=time.perf_counter() - started if config.record_wall_clock else 0.0,
        )
        for name in ("policy_loss", "value_loss", "clip_frac"):
            if not math.isfinite(getattr(row, name)):
                raise NumericalError(f"non-finite {name} at iteration {i}")
        if self.model is not None and not math.isfinite(model_loss):
            raise NumericalError(f"non-finite model loss at iteration {i}")
        self.metrics.append(row)
        self.iteration += 1
        return row

    def save(self, name: str) -> Optional[Path]:
        if self.output_dir is None:
            return None
        path = save_checkpoint(self.output_dir / "checkpoints" / name, self.actor, self.critic,
                               self.model, self.iteration)
        self.checkpoints.append(path)
        return path

    def run(self, on_iteration: Optional[Callable[[IterationMetrics], None]] = None) -> TrainResult:
        """
        Iterate until the step budget is spent.

        Raises:
            NumericalError: After writing checkpoints/abort with the last good state
        """
        config = self.config
        logger.info(
            f"Training seed={config.seed} K={config.num_envs} N={config.rollout_length} "
            f"scheduler=({config.scheduler.a}->{config.scheduler.b}, {config.scheduler.x}->{config.scheduler.y}) "
            f"for {config.num_iterations} iterations"
        )
        while self.total_steps < config.total_steps:
            good = (self.actor, self.critic, self.model, self.opt_state)
            try:
                row = self.step()
            except NumericalError as e:
                logger.error(f"Numerical failure at iteration {self.iteration}: {e}")
                self.actor, self.critic, self.model, self.opt_state = good
                self.save("abort")
                self._write_metrics()
                raise
            if on_iteration is not None:
                on_iteration(row)
            if row.iter % config.log_every == 0:
                logger.info(
                    f"iter {row.iter}: N_r={row.n_r} N_s={row.n_s} sim={row.sim_steps_cum} "
                    f"return={row.mean_return:.3f} model_loss={row.model_loss:.4f} "
                    f"policy_loss={row.policy_loss:.4f} value_loss={row.value_loss:.4f}"
                )
            if config.checkpoint_every and self.iteration % config.checkpoint_every == 0:
                self.save(f"iter_{self.iteration:06d}")

        self.save("final")
        metrics = self._write_metrics()
        logger.info(f"Finished {self.iteration} iterations, {self.sim_steps} simulated + {self.syn_steps} synthetic steps")
        return TrainResult(metrics, list(self.checkpoints), self.actor, self.critic, self.model)

    def _write_metrics(self) -> pd.DataFrame:
        metrics = metrics_frame(self.metrics)
        if self.output_dir is not None:
            write_metrics_csv(metrics, self.output_dir / METRICS_FILE)
        return metrics


def train_run(config: TrainConfig,
              on_iteration: Optional[Callable[[IterationMetrics], None]] = None) -> TrainResult:
    """
    Train one policy with the Dyna-augmented loop.

    Args:
        config: Run configuration (validated here)
        on_iteration: Optional callback receiving every IterationMetrics row

    Returns:
        TrainResult; metrics.csv and checkpoints are also written when
        config.output_dir is set

    Raises:
        ConfigError: If the configuration is invalid
        NumericalError: If training produces non-finite values
    """
    return DynaTrainer(config).run(on_iteration)


def steps_to_threshold(series, threshold: float) -> Optional[int]:
    """
    Cumulative simulated steps at the first iteration whose mean return >= threshold.

    Args:
        series: Metrics DataFrame or list of IterationMetrics, ordered by iteration
        threshold: Reward threshold

    Returns:
        Step count, or None if the threshold is never reached

    Raises:
        ValueError: If the series is empty
    """
    frame = metrics_frame(series)
    if frame.empty:
        raise ValueError("cannot compute steps to threshold on an empty metrics series")
    reached = frame.index[frame["mean_return"].to_numpy(dtype=np.float64) >= threshold]
    if len(reached) == 0:
        return None
    return int(frame.loc[reached[0], "sim_steps_cum"])


def steps_to_threshold_capped(series, threshold: float) -> int:
    """Like steps_to_threshold, but counts every simulated step of the run when never reached."""
    frame = metrics_frame(series)
    steps = steps_to_threshold(frame, threshold)
    return int(frame["sim_steps_cum"].iloc[-1]) if steps is None else steps


def summarize_run(series, threshold: Optional[float]) -> Dict:
    """Scalar summary of one run used by ablation, comparison and the run registry."""
    frame = metrics_frame(series)
    if frame.empty:
        raise ValueError("cannot summarize an empty metrics series")
    returns = frame["mean_return"].to_numpy(dtype=np.float64)
    finite = returns[np.isfinite(returns)]
    summary = {
        "iterations": int(len(frame)),
        "sim_steps": int(frame["sim_steps_cum"].iloc[-1]),
        "syn_steps": int(frame["syn_steps_cum"].iloc[-1]),
        "max_return": float(finite.max()) if finite.size else float("nan"),
        "final_return": float(returns[-1]),
        "success": False,
        "steps_to_threshold": None,
        "steps_capped": None,
    }
    if threshold is not None:
        steps = steps_to_threshold(frame, threshold)
        summary["success"] = steps is not None
        summary["steps_to_threshold"] = steps
        summary["steps_capped"] = steps_to_threshold_capped(frame, threshold)
    return summary


def calibrate_threshold(series, fraction: float = 0.85, tail_fraction: float = 0.1) -> float:
    """
    Threshold as `fraction` of the mean return over the final `tail_fraction` of iterations.

    Raises:
        ValueError: If the series is empty or has no finite return in the tail
    """
    frame = metrics_frame(series)
    if frame.empty:
        raise ValueError("cannot calibrate a threshold from an empty run")
    if not 0 < tail_fraction <= 1:
        raise ValueError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
    tail = max(1, math.ceil(tail_fraction * len(frame)))
    returns = frame["mean_return"].to_numpy(dtype=np.float64)[-tail:]
    returns = returns[np.isfinite(returns)]
    if returns.size == 0:
        raise ValueError("reference run completed no episodes in its final iterations")
    return float(fraction * returns.mean())


# Training configurations mirroring the study's comparison table.
PRESETS: Dict[str, Dict] = {
    "baseline": {"rollout_length": 24, "scheduler": SchedulerConfig(a=0, b=500, x=0, y=0)},
    "no_scheduler_2step": {"rollout_length": 22, "scheduler": SchedulerConfig(a=0, b=0, x=2, y=2)},
    "ours_2step": {"rollout_length": 22, "scheduler": SchedulerConfig(a=0, b=500, x=0, y=2)},
    "ours_4step": {"rollout_length": 24, "scheduler": SchedulerConfig(a=0, b=500, x=0, y=4)},
}


def apply_preset(config: TrainConfig, name: str) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}', expected one of {sorted(PRESETS)}")
    preset = PRESETS[name]
    scheduler = replace(preset["scheduler"], max_synthetic=max(config.scheduler.max_synthetic, preset["scheduler"].y))
    return replace(config, rollout_length=preset["rollout_length"], scheduler=scheduler)


def _run_dir(base: TrainConfig, label: str) -> str:
    return str(Path(base.output_dir) / label) if base.output_dir else ""


def _execute(jobs: List[Tuple[str, TrainConfig]], processor: Optional["RunProcessor"]) -> List[Dict]:
    """Run (label, config) jobs in order, or on the processor, and return their summaries."""
    if processor is None:
        summaries = []
        for label, cfg in jobs:
            logger.info(f"Running {label}")
            summaries.append(summarize_run(train_run(cfg).metrics, cfg.threshold))
        return summaries
    run_ids = [processor.queue_run(cfg, label) for label, cfg in jobs]
    processor.wait(run_ids)
    return [processor.get_result(run_id) for run_id in run_ids]


def _std(values: np.ndarray) -> float:
    return float(np.std(values)) if values.size else float("nan")


def _mean(values: np.ndarray) -> float:
    return float(np.mean(values)) if values.size else float("nan")


def _steps_array(summaries: List[Dict], key: str) -> np.ndarray:
    return np.array([s[key] for s in summaries if s.get(key) is not None], dtype=np.float64)


def ablate_rollout_lengths(base: TrainConfig, lengths: Sequence[int], seeds: Sequence[int],
                           threshold: Optional[float] = None,
                           processor: Optional["RunProcessor"] = None) -> pd.DataFrame:
    """
    Train plain PPO for every (rollout length, seed) and aggregate per length.

    Args:
        base: Template config; rollout_length, seed and scheduler are overridden
        lengths: Rollout lengths N to sweep
        seeds: Seeds per length (duplicates allowed)
        threshold: Reward threshold; defaults to base.threshold
        processor: Optional RunProcessor to execute runs on worker threads

    Returns:
        DataFrame with one row per length: max return mean/std, success rate (%),
        steps to threshold mean/std over successful seeds, and the capped variant
    """
    if not lengths or not seeds:
        raise ConfigError("ablation needs at least one rollout length and one seed")
    threshold = base.threshold if threshold is None else threshold
    jobs = []
    for n in lengths:
        for seed in seeds:
            label = f"N{n}_seed{seed}"
            cfg = replace(base, rollout_length=int(n), seed=int(seed), threshold=threshold,
                          scheduler=replace(base.scheduler, x=0, y=0),
                          output_dir=_run_dir(base, label))
            jobs.append((label, cfg.validate()))
    summaries = _execute(jobs, processor)

    rows = []
    per_length = len(seeds)
    for j, n in enumerate(lengths):
        group = summaries[j * per_length:(j + 1) * per_length]
        max_returns = np.array([s["max_return"] for s in group], dtype=np.float64)
        steps = _steps_array(group, "steps_to_threshold")
        capped = _steps_array(group, "steps_capped")
        rows.append({
            "rollout_length": int(n),
            "runs": len(group),
            "max_return_mean": _mean(max_returns),
            "max_return_std": _std(max_returns),
            "success_rate": 100.0 * sum(bool(s["success"]) for s in group) / len(group),
            "steps_mean": _mean(steps),
            "steps_std": _std(steps),
            "steps_capped_mean": _mean(capped),
            "steps_capped_std": _std(capped),
        })
    return pd.DataFrame(rows)


def _iqr(values: np.ndarray) -> float:
    if values.size == 0:
        return float("nan")
    q75, q25 = np.percentile(values, [75, 25])
    return float(q75 - q25)


def _median(values: np.ndarray) -> float:
    return float(np.median(values)) if values.size else float("nan")


def compare_configurations(base: TrainConfig, presets: Sequence[str], seeds: Sequence[int],
                           threshold: Optional[float] = None,
                           processor: Optional["RunProcessor"] = None) -> pd.DataFrame:
    """
    Run each named preset over seeds and compare sample efficiency.

    Returns:
        DataFrame with one row per preset: success rate (%), median and IQR of
        simulated steps to threshold (successful seeds and capped), and max
        return mean/std
    """
    if not presets or not seeds:
        raise ConfigError("comparison needs at least one preset and one seed")
    threshold = base.threshold if threshold is None else threshold
    jobs = []
    for name in presets:
        for seed in seeds:
            label = f"{name}_seed{seed}"
            cfg = replace(apply_preset(base, name), seed=int(seed), threshold=threshold,
                          output_dir=_run_dir(base, label))
            jobs.append((label, cfg.validate()))
    summaries = _execute(jobs, processor)

    rows = []
    per_preset = len(seeds)
    for j, name in enumerate(presets):
        group = summaries[j * per_preset:(j + 1) * per_preset]
        steps = _steps_array(group, "steps_to_threshold")
        capped = _steps_array(group, "steps_capped")
        max_returns = np.array([s["max_return"] for s in group], dtype=np.float64)
        rows.append({
            "preset": name,
            "runs": len(group),
            "success_rate": 100.0 * sum(bool(s["success"]) for s in group) / len(group),
            "steps_median": _median(steps),
            "steps_iqr": _iqr(steps),
            "steps_capped_median": _median(capped),
            "steps_capped_iqr": _iqr(capped),
            "max_return_mean": _mean(max_returns),
            "max_return_std": _std(max_returns),
        })
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class HeatmapSpec:
    """Command grid and measurement protocol for the tracking-error evaluation."""
    vx_values: Tuple[float, ...]
    wz_values: Tuple[float, ...]
    trials: int = 3
    warmup_steps: int = 50
    measure_steps: int = 250
    vy: float = 0.0

    @classmethod
    def uniform(cls, env: EnvParams, size: int = 9, **kwargs) -> "HeatmapSpec":
        """size x size grid spanning the configured vx and wz command ranges."""
        if size < 1:
            raise ConfigError(f"heatmap grid size must be >= 1, got {size}")
        vx = np.linspace(*env.cmd_vx_range, size) if size > 1 else np.array([np.mean(env.cmd_vx_range)])
        wz = np.linspace(*env.cmd_wz_range, size) if size > 1 else np.array([np.mean(env.cmd_wz_range)])
        return cls(tuple(float(v) for v in vx), tuple(float(w) for w in wz), **kwargs)

    def validate(self) -> "HeatmapSpec":
        if not self.vx_values or not self.wz_values:
            raise ConfigError("heatmap grid must contain at least one command")
        if self.trials < 1:
            raise ConfigError(f"heatmap trials must be >= 1, got {self.trials}")
        if self.warmup_steps < 0 or self.measure_steps < 1:
            raise ConfigError("heatmap needs warmup_steps >= 0 and measure_steps > 0")
        return self

    def grid(self) -> List[Tuple[float, float]]:
        return [(vx, wz) for vx in self.vx_values for wz in self.wz_values]


Agent = Callable[[np.ndarray], np.ndarray]
StepFn = Callable[..., StepResult]


def _as_agent(policy: Union[ActorParams, Agent]) -> Agent:
    if isinstance(policy, ActorParams):
        def act(obs: np.ndarray) -> np.ndarray:
            actions, _ = policy_act(policy, obs, None, deterministic=True)
            return actions[0]
        return act
    return policy


def eval_tracking_heatmap(policy: Union[ActorParams, Agent], spec: HeatmapSpec, env_params: EnvParams,
                          seed: int = 0, step_fn: StepFn = env_step) -> pd.DataFrame:
    """
    Mean absolute tracking error of v_x and w_z over a command grid.

    For each cell and trial the environment is reset with the fixed command
    (vx, spec.vy, wz), the deterministic policy runs warmup_steps + measure_steps
    steps, and absolute errors are averaged over the measurement window. A fall
    ends the trial; its MAE covers the steps measured before it and the cell's
    fall count is incremented. Cell values average the trials that measured
    at least one step (NaN if none did).

    Args:
        policy: Trained actor (mean action is used) or a callable obs -> action
        spec: Grid and protocol
        env_params: Environment constants; episode_length is raised to cover
            the protocol if needed
        seed: Seed for resets and observation noise
        step_fn: Transition function with env_step's signature

    Returns:
        DataFrame with HEATMAP_COLUMNS, one row per grid cell
    """
    spec.validate()
    agent = _as_agent(policy)
    horizon = spec.warmup_steps + spec.measure_steps
    params = replace(env_params, episode_length=max(env_params.episode_length, horizon))
    cells = spec.grid()
    streams = np.random.SeedSequence(seed).spawn(len(cells) * spec.trials)

    rows = []
    for c, (vx, wz) in enumerate(cells):
        command = np.array([vx, spec.vy, wz], dtype=np.float64)
        mae_vx, mae_wz, falls = [], [], 0
        for trial in range(spec.trials):
            rng = np.random.default_rng(streams[c * spec.trials + trial])
            state, _, obs = env_reset(params, rng, command=command)
            err_vx = err_wz = 0.0
            measured = 0
            for t in range(horizon):
                result = step_fn(params, state, command, agent(obs), rng)
                if t >= spec.warmup_steps:
                    err_vx += abs(float(result.next_state.v[0]) - vx)
                    err_wz += abs(float(result.next_state.w) - wz)
                    measured += 1
                if result.done:
                    if result.done_reason == "fall":
                        falls += 1
                    break
                state, obs = result.next_state, result.obs
            if measured:
                mae_vx.append(err_vx / measured)
                mae_wz.append(err_wz / measured)
        cell_vx = float(np.mean(mae_vx)) if mae_vx else float("nan")
        cell_wz = float(np.mean(mae_wz)) if mae_wz else float("nan")
        rows.append({
            "vx_cmd": vx,
            "wz_cmd": wz,
            "mae_vx": cell_vx,
            "mae_wz": cell_wz,
            "mae_total": 0.5 * (cell_vx + cell_wz),
            "falls": falls,
        })
    logger.info(f"Evaluated tracking error on {len(cells)} commands x {spec.trials} trials")
    return pd.DataFrame(rows, columns=HEATMAP_COLUMNS)
