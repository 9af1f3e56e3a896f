"""
Quadruped Surrogate Environment Module

Deterministic, vectorizable planar stand-in for a legged robot that keeps the
interface of a velocity-command tracking task: proprioceptive state
(q, q_dot, g, v, omega), joint-target actions tracked by a PD law, and a
command-conditioned reward r = r_task * exp(sigma_aux * r_aux).

Plant (semi-implicit Euler, velocities updated before positions):
    q_ddot  = Kp (a - q) - (Kd + c_q) q_dot
    v_dot   = M_v q_dot - c_v v      (+ optional stroke coupling, see EnvParams.k_stroke)
    w_dot   = M_w q_dot - c_w w
    g_dot   = k_g [v_x, v_y] - c_g g

Episodes end on timeout (step_index == T) or fall (max |g| > g_max).

All functions accept either a single environment (state arrays of shape (4,),
(2,), () ...) or a batch of K environments (leading axis K). Every reduction
is written as an explicit ordered sum so batched and single-environment
results are bitwise identical.

Typical usage:
    params = EnvParams()
    state, command, obs = env_reset(params, rng)
    result = env_step(params, state, command, action)
    batch = vector_env_step(params, states, commands, actions, rngs)
"""

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, NumericalError, RolloutError

NUM_JOINTS = 4
ACTION_DIM = 4
COMMAND_DIM = 3
PHYSICAL_DIM = 13   # q(4) q_dot(4) g(2) v(2) omega(1)
OBS_DIM = 20        # physical state + command(3) + previous action(4)

# Fixed mixing constants mapping joint velocity to body accelerations.
DEFAULT_MIX_V = (
    0.37, -0.21, 0.44, -0.12,
    -0.18, 0.29, 0.07, -0.41,
)
DEFAULT_MIX_W = (0.23, -0.35, -0.27, 0.31)

Generators = Union[np.random.Generator, Sequence[np.random.Generator], None]


@dataclass(frozen=True)
class EnvParams:
    """
    Plant, termination and reward constants of the surrogate.

    Units: dt in seconds, kp in 1/s^2, dampings in 1/s, k_g in s/m,
    episode_length in steps. Command ranges are (low, high) tuples.
    """
    dt: float = 0.02
    kp: float = 20.0
    kd: float = 0.5
    c_q: float = 0.1
    mix_v: Tuple[float, ...] = DEFAULT_MIX_V
    mix_w: Tuple[float, ...] = DEFAULT_MIX_W
    c_v: float = 1.0
    c_w: float = 1.0
    k_g: float = 0.05
    c_g: float = 2.0
    g_max: float = 1.0
    k_stroke: float = 0.0
    episode_length: int = 300
    obs_noise: float = 0.0
    reset_noise: float = 0.01
    cmd_vx_range: Tuple[float, float] = (-1.0, 1.0)
    cmd_vy_range: Tuple[float, float] = (-0.6, 0.6)
    cmd_wz_range: Tuple[float, float] = (-1.0, 1.0)
    w_lin: float = 0.7
    w_ang: float = 0.3
    sigma_lin: float = 0.25
    sigma_ang: float = 0.25
    c_rate: float = 0.05
    c_qd: float = 0.001
    c_vz: float = 0.1
    sigma_aux: float = 1.0

    @property
    def mix_v_matrix(self) -> np.ndarray:
        return np.asarray(self.mix_v, dtype=np.float64).reshape(2, NUM_JOINTS)

    @property
    def mix_w_matrix(self) -> np.ndarray:
        return np.asarray(self.mix_w, dtype=np.float64).reshape(1, NUM_JOINTS)

    def validate(self) -> "EnvParams":
        """Raise ConfigError if any invariant is violated; returns self for chaining."""
        positive = {
            "dt": self.dt, "kp": self.kp, "kd": self.kd, "c_q": self.c_q,
            "c_v": self.c_v, "c_w": self.c_w, "c_g": self.c_g, "g_max": self.g_max,
            "sigma_lin": self.sigma_lin, "sigma_ang": self.sigma_ang, "sigma_aux": self.sigma_aux,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigError(f"env.{name} must be > 0, got {value}")
        for name in ("k_g", "obs_noise", "reset_noise", "c_rate", "c_qd", "c_vz", "w_lin", "w_ang"):
            if getattr(self, name) < 0:
                raise ConfigError(f"env.{name} must be >= 0, got {getattr(self, name)}")
        if self.episode_length < 1:
            raise ConfigError(f"env.episode_length must be >= 1, got {self.episode_length}")
        if len(self.mix_v) != 2 * NUM_JOINTS or len(self.mix_w) != NUM_JOINTS:
            raise ConfigError("env.mix_v needs 8 entries and env.mix_w needs 4")
        if abs(self.w_lin + self.w_ang - 1.0) > 1e-9:
            raise ConfigError(f"env.w_lin + env.w_ang must equal 1, got {self.w_lin + self.w_ang}")
        for name in ("cmd_vx_range", "cmd_vy_range", "cmd_wz_range"):
            low, high = getattr(self, name)
            if low > high:
                raise ConfigError(f"env.{name} has low > high: {(low, high)}")
        return self


class Command(NamedTuple):
    """Velocity command held constant for a whole episode."""
    vx: float
    vy: float
    wz: float


@dataclass
class EnvState:
    """
    Physical state of one environment, or of K environments along axis 0.

    Fields: q, q_dot (joint positions/velocities), g (tilt surrogate),
    v (body-frame linear velocity), w (yaw rate), prev_action, step_index.
    """
    q: np.ndarray
    qd: np.ndarray
    g: np.ndarray
    v: np.ndarray
    w: np.ndarray
    prev_action: np.ndarray
    step_index: np.ndarray

    @property
    def batched(self) -> bool:
        return self.q.ndim == 2

    def __len__(self) -> int:
        return self.q.shape[0] if self.batched else 1

    def physical(self) -> np.ndarray:
        """Concatenated (q, q_dot, g, v, w): shape (..., 13)."""
        return np.concatenate([self.q, self.qd, self.g, self.v, self.w[..., None]], axis=-1)

    def copy(self) -> "EnvState":
        return EnvState(*(np.array(getattr(self, f), copy=True) for f in _STATE_FIELDS))

    def row(self, i: int) -> "EnvState":
        return EnvState(*(np.array(getattr(self, f)[i], copy=True) for f in _STATE_FIELDS))

    def set_row(self, i: int, other: "EnvState"):
        for f in _STATE_FIELDS:
            getattr(self, f)[i] = getattr(other, f)

    @classmethod
    def stack(cls, states: Sequence["EnvState"]) -> "EnvState":
        return cls(*(np.stack([getattr(s, f) for s in states]) for f in _STATE_FIELDS))

    @classmethod
    def from_physical(cls, physical: np.ndarray, prev_action: np.ndarray,
                      step_index) -> "EnvState":
        x = np.asarray(physical, dtype=np.float64)
        return cls(
            q=x[..., 0:4].copy(), qd=x[..., 4:8].copy(), g=x[..., 8:10].copy(),
            v=x[..., 10:12].copy(), w=x[..., 12].copy(),
            prev_action=np.asarray(prev_action, dtype=np.float64).copy(),
            step_index=np.asarray(step_index, dtype=np.int64).copy(),
        )


_STATE_FIELDS = ("q", "qd", "g", "v", "w", "prev_action", "step_index")


@dataclass
class StepResult:
    """
    Outcome of one env_step.

    For a single environment the scalar fields are Python floats/bools/strings;
    for a batch they are arrays of length K. done_reason is 'fall', 'timeout'
    or '' when the episode continues.
    """
    next_state: EnvState
    obs: np.ndarray
    reward: Union[float, np.ndarray]
    reward_task: Union[float, np.ndarray]
    done: Union[bool, np.ndarray]
    done_reason: Union[str, np.ndarray]


@dataclass
class VectorStepResult:
    """
    Outcome of vector_env_step.

    step holds the raw transition (terminal next_state/obs for finished
    environments); states, commands and obs are what the next step starts from,
    i.e. freshly reset for environments whose episode ended.
    """
    step: StepResult
    states: EnvState
    commands: np.ndarray
    obs: np.ndarray
    reset_mask: np.ndarray


def _mix(matrix: np.ndarray, x: np.ndarray) -> np.ndarray:
    """matrix @ x over the last axis, summed in fixed column order."""
    out = x[..., 0, None] * matrix[:, 0]
    for j in range(1, matrix.shape[1]):
        out = out + x[..., j, None] * matrix[:, j]
    return out


def _sqnorm(x: np.ndarray) -> np.ndarray:
    out = x[..., 0] * x[..., 0]
    for j in range(1, x.shape[-1]):
        out = out + x[..., j] * x[..., j]
    return out


def _as_generators(rng: Generators, count: int) -> List[Optional[np.random.Generator]]:
    if rng is None or isinstance(rng, np.random.Generator):
        return [rng] * count
    rngs = list(rng)
    if len(rngs) != count:
        raise RolloutError(f"expected {count} RNG streams, got {len(rngs)}")
    return rngs


def assemble_observation(physical: np.ndarray, command, prev_action: np.ndarray) -> np.ndarray:
    """Build the 20-wide policy input from physical state, command and previous action."""
    physical = np.asarray(physical, dtype=np.float64)
    command = np.broadcast_to(np.asarray(command, dtype=np.float64), physical.shape[:-1] + (COMMAND_DIM,))
    prev_action = np.asarray(prev_action, dtype=np.float64)
    return np.concatenate([physical, command, prev_action], axis=-1)


def make_observation(state: EnvState, command, params: Optional[EnvParams] = None,
                     rng: Generators = None) -> np.ndarray:
    """
    Observation [q, q_dot, g, v, w, command, prev_action] for one or K environments.

    Observation noise (params.obs_noise) is added only when an RNG is supplied;
    with a batch, pass one generator per environment.
    """
    obs = assemble_observation(state.physical(), command, state.prev_action)
    if params is not None and params.obs_noise > 0 and rng is not None:
        if obs.ndim == 1:
            obs = obs + params.obs_noise * _as_generators(rng, 1)[0].standard_normal(OBS_DIM)
        else:
            noise = np.stack([g.standard_normal(OBS_DIM) for g in _as_generators(rng, obs.shape[0])])
            obs = obs + params.obs_noise * noise
    return obs


def sample_command(params: EnvParams, rng: np.random.Generator) -> np.ndarray:
    """Draw (vx, vy, wz) uniformly from the configured ranges."""
    return np.array([
        rng.uniform(*params.cmd_vx_range),
        rng.uniform(*params.cmd_vy_range),
        rng.uniform(*params.cmd_wz_range),
    ], dtype=np.float64)


def env_reset(params: EnvParams, rng: np.random.Generator,
              command=None) -> Tuple[EnvState, np.ndarray, np.ndarray]:
    """
    Start a new episode.

    Args:
        params: Environment constants
        rng: Generator owned by this environment
        command: Optional fixed command; sampled from the configured ranges when None

    Returns:
        Tuple of (EnvState, command array of shape (3,), observation of shape (20,))

    Note:
        The physical state is zero plus Gaussian noise of std params.reset_noise;
        the previous action starts at zero.
    """
    noise = rng.standard_normal(PHYSICAL_DIM) * params.reset_noise
    cmd = sample_command(params, rng) if command is None else np.asarray(command, dtype=np.float64).copy()
    if cmd.shape != (COMMAND_DIM,):
        raise ValueError(f"command must have 3 entries, got shape {cmd.shape}")
    state = EnvState.from_physical(noise, np.zeros(ACTION_DIM), 0)
    return state, cmd, make_observation(state, cmd, params, rng)


def reward_task(state: EnvState, command, params: EnvParams):
    """
    Command-tracking reward in (0, 1].

    w_lin * exp(-|v_cmd - v|^2 / sigma_lin) + w_ang * exp(-(w_cmd - w)^2 / sigma_ang)
    """
    cmd = np.asarray(command, dtype=np.float64)
    ex = cmd[..., 0] - state.v[..., 0]
    ey = cmd[..., 1] - state.v[..., 1]
    ew = cmd[..., 2] - state.w
    lin = np.exp(-(ex * ex + ey * ey) / params.sigma_lin)
    ang = np.exp(-(ew * ew) / params.sigma_ang)
    return params.w_lin * lin + params.w_ang * ang


def reward_aux(state: EnvState, action: np.ndarray, prev_action: np.ndarray, params: EnvParams):
    """Non-positive penalty: action rate, joint speed and tilt magnitude."""
    rate = _sqnorm(np.asarray(action) - np.asarray(prev_action))
    return -(params.c_rate * rate + params.c_qd * _sqnorm(state.qd) + params.c_vz * _sqnorm(state.g))


def reward_compose(r_task, r_aux, sigma_aux: float):
    """
    Combine task reward and penalties as r_task * exp(sigma_aux * r_aux).

    Raises:
        ValueError: If r_aux is positive anywhere or sigma_aux is not positive
    """
    r_aux = np.asarray(r_aux, dtype=np.float64)
    if np.any(r_aux > 0):
        raise ValueError("auxiliary reward must be <= 0 (penalty terms only)")
    if not sigma_aux > 0:
        raise ValueError(f"sigma_aux must be > 0, got {sigma_aux}")
    out = np.asarray(r_task, dtype=np.float64) * np.exp(sigma_aux * r_aux)
    return float(out) if out.ndim == 0 else out


def _fallen(g: np.ndarray, params: EnvParams) -> np.ndarray:
    return np.maximum(np.abs(g[..., 0]), np.abs(g[..., 1])) > params.g_max


def is_terminal(state: EnvState, params: EnvParams):
    return (np.asarray(state.step_index) >= params.episode_length) | _fallen(state.g, params)


def env_step(params: EnvParams, state: EnvState, command, action,
             rng: Generators = None) -> StepResult:
    """
    Advance one (or K) environments by dt.

    Args:
        params: Environment constants
        state: Current, non-terminal state
        command: Command array (3,) or (K, 3)
        action: Joint targets (4,) or (K, 4)
        rng: Only needed when params.obs_noise > 0

    Returns:
        StepResult for the transition

    Raises:
        NumericalError: If the action contains NaN or infinity
        RolloutError: If the state is already terminal or shapes disagree
    """
    a = np.asarray(action, dtype=np.float64)
    if a.shape != state.prev_action.shape:
        raise RolloutError(f"action shape {a.shape} does not match state shape {state.prev_action.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("non-finite action passed to env_step")
    if np.any(is_terminal(state, params)):
        raise RolloutError("cannot step a terminal state; reset the environment first")

    dt = params.dt
    qdd = params.kp * (a - state.q) - (params.kd + params.c_q) * state.qd
    qd = state.qd + dt * qdd
    q = state.q + dt * qd

    v_dot = _mix(params.mix_v_matrix, qd) - params.c_v * state.v
    if params.k_stroke != 0.0:
        stroke = np.stack([qd[..., 0] * q[..., 1] - qd[..., 1] * q[..., 0],
                           qd[..., 2] * q[..., 3] - qd[..., 3] * q[..., 2]], axis=-1)
        v_dot = v_dot + params.k_stroke * stroke
    v = state.v + dt * v_dot
    w_dot = _mix(params.mix_w_matrix, qd)[..., 0] - params.c_w * state.w
    w = state.w + dt * w_dot
    g = state.g + dt * (params.k_g * v - params.c_g * state.g)

    next_state = EnvState(q, qd, g, v, w, a.copy(), np.asarray(state.step_index) + 1)

    r_task = reward_task(next_state, command, params)
    r_aux = reward_aux(next_state, a, state.prev_action, params)
    reward = np.asarray(reward_compose(r_task, r_aux, params.sigma_aux))

    fell = _fallen(g, params)
    timeout = next_state.step_index >= params.episode_length
    done = fell | timeout
    reason = np.where(fell, "fall", np.where(timeout, "timeout", ""))
    obs = make_observation(next_state, command, params, rng)

    if not state.batched:
        return StepResult(next_state, obs, float(reward), float(r_task), bool(done), str(reason))
    return StepResult(next_state, obs, reward, np.asarray(r_task), np.asarray(done), reason)


def reset_all(params: EnvParams, rngs: Sequence[np.random.Generator],
              commands=None) -> Tuple[EnvState, np.ndarray, np.ndarray]:
    """Reset K environments, one generator each. Returns batched (states, commands, obs)."""
    results = [env_reset(params, r, None if commands is None else commands[i]) for i, r in enumerate(rngs)]
    states = EnvState.stack([s for s, _, _ in results])
    return states, np.stack([c for _, c, _ in results]), np.stack([o for _, _, o in results])


def vector_env_step(params: EnvParams, states: EnvState, commands, actions,
                    rngs: Sequence[np.random.Generator]) -> VectorStepResult:
    """
    Step K environments together and auto-reset those that finished.

    Args:
        params: Environment constants
        states: Batched EnvState with K rows
        commands: Array (K, 3)
        actions: Array (K, 4)
        rngs: One generator per environment (used for resets and observation noise)

    Returns:
        VectorStepResult; finished rows of states/commands/obs hold the reset values

    Raises:
        RolloutError: If K differs between inputs or K < 1
    """
    commands = np.asarray(commands, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    k = len(states) if states.batched else 0
    if k < 1 or commands.shape != (k, COMMAND_DIM) or actions.shape != (k, ACTION_DIM) or len(rngs) != k:
        raise RolloutError(
            f"length mismatch: states {k}, commands {commands.shape}, actions {actions.shape}, rngs {len(rngs)}"
        )

    step = env_step(params, states, commands, actions, rng=rngs if params.obs_noise > 0 else None)
    next_states = step.next_state.copy()
    next_commands = commands.copy()
    next_obs = step.obs.copy()
    for i in np.flatnonzero(step.done):
        fresh, cmd, obs = env_reset(params, rngs[i])
        next_states.set_row(i, fresh)
        next_commands[i] = cmd
        next_obs[i] = obs
    return VectorStepResult(step, next_states, next_commands, next_obs, np.asarray(step.done, dtype=bool))
