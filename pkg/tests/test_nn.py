import numpy as np
import pytest

import oracles
from qfwp.errors import ArgumentError, StateError
from qfwp.nn import AdamState, DenseLayer, adam_apply, dense_backward, dense_forward, init_uniform


def test_identity_layer_passes_through():
    layer = DenseLayer(np.eye(3), np.zeros(3))
    x = np.array([0.5, -2.0, 3.0])
    out, _ = dense_forward(layer, x)
    np.testing.assert_array_equal(out, x)


def test_zero_weights_give_bias():
    layer = DenseLayer(np.zeros((2, 4)), np.array([1.5, -0.5]))
    np.testing.assert_array_equal(layer(np.arange(4.0)), [1.5, -0.5])


def test_tanh_matches_hand_multiply():
    rng = np.random.default_rng(2)
    w, b, x = rng.normal(size=(3, 2)), rng.normal(size=3), rng.normal(size=2)
    out, _ = dense_forward(DenseLayer(w, b, "tanh"), x)
    expected = [np.tanh(sum(w[i, j] * x[j] for j in range(2)) + b[i]) for i in range(3)]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_param_count_convention():
    assert DenseLayer(np.zeros((8, 1)), np.zeros(8)).num_params == 16
    assert DenseLayer(np.zeros((1, 4)), np.zeros(1)).num_params == 5


def test_forward_shape_error():
    with pytest.raises(ArgumentError):
        dense_forward(DenseLayer(np.zeros((2, 3)), np.zeros(2)), np.zeros(4))


def test_backward_identity():
    layer = DenseLayer(np.eye(3), np.zeros(3))
    _, tape = dense_forward(layer, np.ones(3))
    g = np.array([1.0, 2.0, 3.0])
    gx, _, _ = dense_backward(layer, tape, g)
    np.testing.assert_array_equal(gx, g)


def test_weight_grad_closed_form():
    rng = np.random.default_rng(4)
    layer = DenseLayer(rng.normal(size=(3, 2)), rng.normal(size=3), "tanh")
    x = rng.normal(size=2)
    out, tape = dense_forward(layer, x)
    g = rng.normal(size=3)
    _, gw, gb = dense_backward(layer, tape, g)
    np.testing.assert_allclose(gw, np.outer((1 - out ** 2) * g, x), atol=1e-15)
    np.testing.assert_allclose(gb, (1 - out ** 2) * g, atol=1e-15)


@pytest.mark.parametrize("activation", ["identity", "tanh"])
def test_backward_against_finite_differences(activation):
    rng = np.random.default_rng(7)
    layer = DenseLayer(rng.normal(size=(4, 3)), rng.normal(size=4), activation)
    x = rng.normal(size=3)
    probe = rng.normal(size=4)
    loss = lambda: float(probe @ dense_forward(layer, x)[0])
    _, tape = dense_forward(layer, x)
    gx, gw, gb = dense_backward(layer, tape, probe)
    np.testing.assert_allclose(gx, oracles.central_diff(loss, x, 1e-6), atol=1e-6)
    np.testing.assert_allclose(gw, oracles.central_diff(loss, layer.weights, 1e-6), atol=1e-6)
    np.testing.assert_allclose(gb, oracles.central_diff(loss, layer.bias, 1e-6), atol=1e-6)


def test_batched_backward_sums_rows():
    rng = np.random.default_rng(8)
    layer = DenseLayer(rng.normal(size=(2, 3)), rng.normal(size=2), "tanh")
    xs = rng.normal(size=(5, 3))
    gs = rng.normal(size=(5, 2))
    _, tape = dense_forward(layer, xs)
    gx, gw, gb = dense_backward(layer, tape, gs)
    sw, sb = np.zeros_like(gw), np.zeros_like(gb)
    for x, g in zip(xs, gs):
        _, t = dense_forward(layer, x)
        rx, rw, rb = dense_backward(layer, t, g)
        sw += rw
        sb += rb
    np.testing.assert_allclose(gw, sw, atol=1e-14)
    np.testing.assert_allclose(gb, sb, atol=1e-14)
    assert gx.shape == (5, 3)


def test_tape_single_use():
    layer = DenseLayer(np.eye(2), np.zeros(2))
    _, tape = dense_forward(layer, np.ones(2))
    dense_backward(layer, tape, np.ones(2))
    with pytest.raises(StateError):
        dense_backward(layer, tape, np.ones(2))


def test_adam_zero_grad_is_noop():
    params = {"w": np.array([1.0, -2.0])}
    before = params["w"].copy()
    state = AdamState(lr=0.1)
    adam_apply(params, {"w": np.zeros(2)}, state)
    assert np.array_equal(params["w"], before)
    assert state.step_count == 1


def test_adam_first_step_magnitude():
    params = {"w": np.array([0.0])}
    state = AdamState(lr=1e-4, beta1=0.92, beta2=0.999)
    adam_apply(params, {"w": np.array([1.0])}, state)
    # bias-corrected m_hat = v_hat = 1 at t = 1
    assert params["w"][0] == pytest.approx(-1e-4 / (1 + 1e-8), rel=1e-12)


def test_adam_descends_quadratic():
    params = {"w": np.array([1.0])}
    state = AdamState(lr=0.1)
    history = [1.0]
    for _ in range(3):
        adam_apply(params, {"w": 2 * params["w"]}, state)
        history.append(params["w"][0])
    assert all(b < a for a, b in zip(history, history[1:]))
    assert state.step_count == 3


def test_adam_shape_mismatch():
    with pytest.raises(ArgumentError):
        adam_apply({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())


def test_init_uniform():
    a = init_uniform((4, 5), 0.1, 42)
    b = init_uniform((4, 5), 0.1, 42)
    c = init_uniform((4, 5), 0.1, 43)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.all(np.abs(a) <= 0.1)
