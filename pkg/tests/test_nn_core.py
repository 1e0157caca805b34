import numpy as np
import pytest

from app.core.errors import InputShapeError, TrainingDivergenceError
from app.services.nn_core import AdamState, Mlp, adam_step, mlp_backward, mlp_forward
from tests.conftest import finite_difference


def _reference_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    h = np.asarray(x, dtype=float)
    layers = net.layers()
    for i, layer in enumerate(layers):
        W = layer.V if layer.g is None else layer.g[:, None] * layer.V / np.linalg.norm(layer.V, axis=1)[:, None]
        h = W @ h + layer.b
        if i < len(layers) - 1:
            h = np.tanh(h)
    return h


def test_zero_network_outputs_zero():
    sizes = (3, 4, 2)
    net = Mlp(sizes, np.zeros(Mlp.parameter_count(sizes, weight_norm=False)), weight_norm=False)
    assert np.array_equal(mlp_forward(net, np.array([1.0, -2.0, 0.5])), np.zeros(2))


def test_single_linear_layer_extracts_first_input():
    # layout [V (1x2), g, b]
    net = Mlp((2, 1), np.array([1.0, 0.0, 1.0, 0.0]))
    assert mlp_forward(net, np.array([3.0, 5.0]))[0] == pytest.approx(3.0)


def test_forward_matches_reference_recursion():
    net = Mlp.initialize((2, 16, 16, 7), seed=0)
    net.params = net.params + 0.1 * np.random.default_rng(1).standard_normal(net.params.size)
    x = np.array([0.3, -1.2])
    np.testing.assert_allclose(mlp_forward(net, x), _reference_forward(net, x), rtol=0, atol=1e-12)


def test_forward_batch_equals_rowwise():
    net = Mlp.initialize((2, 5, 3), seed=3)
    X = np.random.default_rng(0).standard_normal((4, 2))
    batch = mlp_forward(net, X)
    for row, out in zip(X, batch):
        np.testing.assert_allclose(mlp_forward(net, row), out, atol=1e-14)


def test_forward_rejects_wrong_input_size():
    net = Mlp.initialize((2, 3, 1), seed=0)
    with pytest.raises(InputShapeError):
        mlp_forward(net, np.ones(3))


def test_backward_zero_upstream_gives_zero_gradient():
    net = Mlp.initialize((2, 4, 3), seed=0)
    grad = mlp_backward(net, np.array([0.5, 0.1]), np.zeros(3))
    assert grad.shape == net.params.shape
    assert np.all(grad == 0.0)


def test_backward_bias_gradient_is_one():
    net = Mlp((2, 1), np.array([0.4, -0.3, 0.9, 0.2]))
    grad = mlp_backward(net, np.array([1.5, 2.0]), np.ones(1))
    assert grad[-1] == pytest.approx(1.0)


@pytest.mark.parametrize("weight_norm", [True, False])
@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(weight_norm, seed):
    rng = np.random.default_rng(seed)
    net = Mlp.initialize((2, 5, 4, 3), seed=rng, weight_norm=weight_norm)
    net.params = net.params + 0.2 * rng.standard_normal(net.params.size)
    X = rng.standard_normal((3, 2))
    upstream = rng.standard_normal((3, 3))

    analytic = mlp_backward(net, X, upstream)
    numeric = finite_difference(lambda p: float(np.sum(upstream * mlp_forward(net.with_params(p), X))), net.params)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_backward_rejects_mismatched_upstream():
    net = Mlp.initialize((2, 3, 2), seed=0)
    with pytest.raises(InputShapeError):
        mlp_backward(net, np.ones(2), np.ones(3))


def test_adam_zero_gradient_is_fixed_point():
    params = np.array([1.0, -2.0, 3.0])
    state = AdamState.zeros(3, lr=0.1)
    np.testing.assert_array_equal(adam_step(state, params, np.zeros(3)), params)


def test_adam_first_step_moves_by_learning_rate():
    params = np.array([0.5, 0.5])
    state = AdamState.zeros(2, lr=0.01)
    updated = adam_step(state, params, np.array([3.0, -0.2]))
    np.testing.assert_allclose(updated - params, [-0.01, 0.01], atol=1e-8)
    assert state.t == 1


def test_adam_minimizes_quadratic():
    theta = np.array([1.0, 1.0])
    state = AdamState.zeros(2, lr=0.1)
    for _ in range(200):
        theta = adam_step(state, theta, 2.0 * theta)
    assert np.linalg.norm(theta) < 1e-3


def test_adam_rejects_non_finite_gradient():
    state = AdamState.zeros(2)
    with pytest.raises(TrainingDivergenceError):
        adam_step(state, np.zeros(2), np.array([np.nan, 0.0]))


def test_network_document_round_trip():
    net = Mlp.initialize((3, 6, 2), seed=7)
    restored = Mlp.from_document(net.to_document())
    assert restored.layer_sizes == net.layer_sizes
    np.testing.assert_array_equal(restored.params, net.params)


def test_parameter_vector_length_is_checked():
    with pytest.raises(InputShapeError):
        Mlp((2, 3, 1), np.zeros(5))
