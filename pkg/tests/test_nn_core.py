import numpy as np
import pytest

from src.errors import NumericalError
from src.nn_core import (
    AdamState,
    MlpParams,
    MlpSpec,
    adam_step,
    clip_by_global_norm,
    global_norm,
    mlp_backward,
    mlp_forward,
    mlp_init,
)


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-3)


@pytest.mark.parametrize("activation", ["elu", "tanh"])
@pytest.mark.parametrize("hidden", [(5,), (8, 8)])
def test_parameter_gradients_match_finite_differences(activation, hidden):
    rng = np.random.default_rng(3)
    spec = MlpSpec(6, hidden, 3, activation)
    params = mlp_init(spec, seed=11)
    x = rng.normal(size=(7, 6))
    g = rng.normal(size=(7, 3))

    def loss(p: MlpParams) -> float:
        out, _ = mlp_forward(p, x)
        return float(np.sum(out * g))

    _, cache = mlp_forward(params, x)
    grads, _ = mlp_backward(params, cache, g)
    analytic = grads.arrays()

    eps = 1e-6
    for _ in range(100):
        i = int(rng.integers(len(analytic)))
        j = int(rng.integers(analytic[i].size))
        plus, minus = params.copy(), params.copy()
        plus.arrays()[i].flat[j] += eps
        minus.arrays()[i].flat[j] -= eps
        numeric = (loss(plus) - loss(minus)) / (2 * eps)
        assert _rel_err(analytic[i].flat[j], numeric) < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    params = mlp_init(MlpSpec(4, (8, 8), 2, "tanh"), seed=1)
    x = rng.normal(size=(3, 4))
    g = rng.normal(size=(3, 2))
    _, cache = mlp_forward(params, x)
    _, grad_x = mlp_backward(params, cache, g)

    eps = 1e-6
    for r in range(3):
        for c in range(4):
            xp, xm = x.copy(), x.copy()
            xp[r, c] += eps
            xm[r, c] -= eps
            numeric = (np.sum(mlp_forward(params, xp)[0] * g) - np.sum(mlp_forward(params, xm)[0] * g)) / (2 * eps)
            assert _rel_err(grad_x[r, c], numeric) < 1e-4


def test_parameter_count_of_reference_model_shape():
    spec = MlpSpec(20, (216, 216, 216, 216), 24)
    params = mlp_init(spec, seed=0)
    assert spec.parameter_count() == 150360
    assert sum(a.size for a in params.arrays()) == 150360


def test_init_is_deterministic_and_bounded():
    spec = MlpSpec(9, (4,), 2)
    a, b = mlp_init(spec, seed=7), mlp_init(spec, seed=7)
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)
    assert np.all(np.abs(a.weights[0]) <= 1 / 3)
    assert np.all(a.biases[0] == 0)
    assert not np.array_equal(a.weights[0], mlp_init(spec, seed=8).weights[0])


def test_forward_shapes_and_single_vector():
    params = mlp_init(MlpSpec(3, (4,), 2), seed=0)
    out, cache = mlp_forward(params, np.ones(3))
    assert out.shape == (1, 2)
    assert len(cache.layer_inputs) == params.num_layers()


def test_forward_rejects_bad_inputs():
    params = mlp_init(MlpSpec(3, (4,), 2), seed=0)
    with pytest.raises(ValueError):
        mlp_forward(params, np.ones((2, 4)))
    with pytest.raises(NumericalError):
        mlp_forward(params, np.array([[0.0, np.nan, 1.0]]))


def test_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec(3, (), 2)
    with pytest.raises(ValueError):
        MlpSpec(3, (4,), 2, activation="relu")


def test_first_adam_step_moves_by_learning_rate():
    params = mlp_init(MlpSpec(2, (3,), 1), seed=0)
    rng = np.random.default_rng(0)
    grads = MlpParams.from_arrays(params.spec, [rng.choice([-1.0, 1.0], size=a.shape) * rng.uniform(0.5, 2.0, size=a.shape)
                                                      for a in params.arrays()])
    state = AdamState.zeros_like(params.arrays())
    new, state = adam_step(params, grads, state, lr=0.01)
    assert state.step == 1
    for old, moved, g in zip(params.arrays(), new.arrays(), grads.arrays()):
        np.testing.assert_allclose(old - moved, 0.01 * np.sign(g), atol=1e-8)


def test_adam_rejects_non_finite_gradient():
    params = mlp_init(MlpSpec(2, (3,), 1), seed=0)
    arrays = [np.zeros_like(a) for a in params.arrays()]
    arrays[0][0, 0] = np.inf
    with pytest.raises(NumericalError):
        adam_step(params, MlpParams.from_arrays(params.spec, arrays), AdamState.zeros_like(params.arrays()), 1e-3)


def test_clip_by_global_norm():
    arrays = [np.full(4, 3.0), np.full(2, 4.0)]
    clipped, norm = clip_by_global_norm(arrays, 1.0)
    assert norm == pytest.approx(np.sqrt(4 * 9 + 2 * 16))
    assert global_norm(clipped) == pytest.approx(1.0)
    unchanged, _ = clip_by_global_norm(arrays, 100.0)
    assert all(np.array_equal(a, b) for a, b in zip(arrays, unchanged))
