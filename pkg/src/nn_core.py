"""
Dense Network Engine Module

Minimal feed-forward network engine shared by the policy, the value function
and the predictive dynamics model. Everything here is a pure function of its
inputs: parameters are plain numpy arrays held in dataclasses, the forward
pass returns an explicit activation cache, and the optimizer returns new
parameters and a new state instead of mutating in place.

Key Features:
- Fixed MLP topology: affine layers, hidden activation (elu or tanh), linear output
- Exact reverse-mode gradients for parameters and inputs
- Bias-corrected Adam and global-norm gradient clipping
- 64-bit arithmetic throughout

Conventions:
- Weight matrices are stored as (out_dim, in_dim); a layer computes x @ W.T + b
- Backward gradients are sums over the batch; callers fold any 1/B factor
  into grad_output

Typical usage:
    spec = MlpSpec(input_dim=20, hidden_dims=(128, 128), output_dim=4)
    params = mlp_init(spec, seed=0)
    outputs, cache = mlp_forward(params, inputs)
    grads, grad_inputs = mlp_backward(params, cache, grad_outputs)
    params, state = adam_step(params, grads, AdamState.zeros_like(params.arrays()), lr=3e-4)
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import NumericalError

ACTIVATIONS = ("elu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    """
    Shape and activation of a dense network.

    Args:
        input_dim: Width of the input vectors
        hidden_dims: Widths of the hidden layers (at least one)
        output_dim: Width of the output vectors
        activation: Hidden-layer activation, 'elu' or 'tanh' (output is linear)
    """
    input_dim: int
    hidden_dims: Tuple[int, ...]
    output_dim: int
    activation: str = "elu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims:
            raise ValueError("hidden_dims must contain at least one layer")
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer dimensions must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}', expected one of {ACTIVATIONS}")

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        """(out_dim, in_dim) for every affine layer, input to output."""
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    def parameter_count(self) -> int:
        return sum(out * inp + out for out, inp in self.layer_shapes)


@dataclass
class MlpParams:
    """Per-layer weights (out, in) and biases (out,) matching an MlpSpec."""
    spec: MlpSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def arrays(self) -> List[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...] used by the optimizer and checkpoints."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, spec: MlpSpec, arrays: Sequence[np.ndarray]) -> "MlpParams":
        shapes = spec.layer_shapes
        if len(arrays) != 2 * len(shapes):
            raise ValueError(f"expected {2 * len(shapes)} arrays for {spec}, got {len(arrays)}")
        weights, biases = [], []
        for i, (out, inp) in enumerate(shapes):
            w = np.asarray(arrays[2 * i], dtype=np.float64).reshape(out, inp)
            b = np.asarray(arrays[2 * i + 1], dtype=np.float64).reshape(out)
            weights.append(w)
            biases.append(b)
        return cls(spec, weights, biases)

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def num_layers(self) -> int:
        return len(self.weights)


@dataclass
class ForwardCache:
    """Activations recorded by mlp_forward and consumed by mlp_backward."""
    spec: MlpSpec
    layer_inputs: List[np.ndarray]
    preactivations: List[np.ndarray]


@dataclass
class AdamState:
    """
    First/second moment accumulators shaped like the optimized arrays.

    The step counter advances by exactly one per update.
    """
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray], beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(a, dtype=np.float64) for a in arrays],
            v=[np.zeros_like(a, dtype=np.float64) for a in arrays],
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    return np.tanh(z)


def _activate_grad(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "elu":
        return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))
    t = np.tanh(z)
    return 1.0 - t * t


def mlp_init(spec: MlpSpec, seed: int) -> MlpParams:
    """
    Initialize weights uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.

    Args:
        spec: Network shape
        seed: Seed for the weight draw; the same seed always gives the same params

    Returns:
        MlpParams with float64 arrays
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for out, inp in spec.layer_shapes:
        bound = 1.0 / np.sqrt(inp)
        weights.append(rng.uniform(-bound, bound, size=(out, inp)))
        biases.append(np.zeros(out, dtype=np.float64))
    return MlpParams(spec, weights, biases)


def mlp_forward(params: MlpParams, inputs) -> Tuple[np.ndarray, ForwardCache]:
    """
    Evaluate the network on a batch.

    Args:
        params: Network parameters
        inputs: Array of shape (batch, input_dim); a single vector is treated as a batch of one

    Returns:
        Tuple of (outputs of shape (batch, output_dim), ForwardCache)

    Raises:
        ValueError: If the input width does not match the spec
        NumericalError: If any input is NaN or infinite
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    spec = params.spec
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"input width {x.shape[-1]} does not match spec input_dim {spec.input_dim}")
    if x.shape[0] < 1:
        raise ValueError("batch must contain at least one row")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite value in network input")

    layer_inputs, preacts = [], []
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        layer_inputs.append(x)
        z = x @ w.T + b
        preacts.append(z)
        x = _activate(z, spec.activation)
    layer_inputs.append(x)
    outputs = x @ params.weights[-1].T + params.biases[-1]
    return outputs, ForwardCache(spec, layer_inputs, preacts)


def mlp_backward(params: MlpParams, cache: ForwardCache,
                 grad_output) -> Tuple[MlpParams, np.ndarray]:
    """
    Back-propagate grad_output through the network.

    Args:
        params: Parameters used for the forward pass
        cache: Cache returned by the matching mlp_forward call
        grad_output: dLoss/dOutput, shape (batch, output_dim)

    Returns:
        Tuple of (gradients shaped like params, dLoss/dInput of shape (batch, input_dim))

    Note:
        Parameter gradients are summed over the batch.
    """
    if cache.spec != params.spec or len(cache.layer_inputs) != params.num_layers():
        raise ValueError("forward cache was produced by a different network")
    delta = np.atleast_2d(np.asarray(grad_output, dtype=np.float64))
    batch = cache.layer_inputs[0].shape[0]
    if delta.shape != (batch, params.spec.output_dim):
        raise ValueError(f"grad_output shape {delta.shape} does not match ({batch}, {params.spec.output_dim})")

    n = params.num_layers()
    grad_w: List[np.ndarray] = [None] * n
    grad_b: List[np.ndarray] = [None] * n
    for i in range(n - 1, -1, -1):
        grad_w[i] = delta.T @ cache.layer_inputs[i]
        grad_b[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
        if i > 0:
            delta = delta * _activate_grad(cache.preactivations[i - 1], params.spec.activation)
    return MlpParams(params.spec, grad_w, grad_b), delta


def global_norm(arrays: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))


def clip_by_global_norm(arrays: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    """Scale arrays so their joint L2 norm is at most max_norm. Returns (arrays, pre-clip norm)."""
    norm = global_norm(arrays)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        return [a * scale for a in arrays], norm
    return list(arrays), norm


def adam_update(arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                state: AdamState, lr: float) -> Tuple[List[np.ndarray], AdamState]:
    """
    Bias-corrected Adam over an arbitrary list of arrays.

    Raises:
        ValueError: If array, gradient and moment shapes disagree
        NumericalError: If any gradient entry is NaN or infinite
    """
    if not (len(arrays) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("parameter, gradient and moment lists differ in length")
    for i, (a, g) in enumerate(zip(arrays, grads)):
        if a.shape != g.shape or a.shape != state.m[i].shape:
            raise ValueError(f"shape mismatch at array {i}: param {a.shape}, grad {g.shape}, moment {state.m[i].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in array {i} (shape {g.shape})")

    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** step
    correction2 = 1.0 - b2 ** step
    new_arrays, new_m, new_v = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_arrays.append(a - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_arrays, AdamState(new_m, new_v, step, b1, b2, state.eps)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState,
              lr: float) -> Tuple[MlpParams, AdamState]:
    """
    One Adam update of a network.

    Args:
        params: Current parameters
        grads: Gradients shaped like params
        state: Optimizer state (see AdamState.zeros_like)
        lr: Learning rate

    Returns:
        Tuple of (updated params, updated state)
    """
    if grads.spec != params.spec:
        raise ValueError("gradient spec does not match parameter spec")
    arrays, state = adam_update(params.arrays(), grads.arrays(), state, lr)
    return MlpParams.from_arrays(params.spec, arrays), state
