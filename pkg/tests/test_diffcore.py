import numpy as np
from scipy.special import log_softmax

import pytest
from pytest import approx, fixture, mark

from CFSFL.components.diffcore import (AdamState, ParamSet, Tensor, adam_step, backward, concat, forward_layer,
                                       grad_check, init_dense)
from CFSFL.constants import PHI, PSI, THETA
from CFSFL.exception import ContractError, NumericError, ShapeError


def _naive_layer(x, W, b):
    out = np.zeros((x.shape[0], W.shape[1]))
    for i in range(x.shape[0]):
        for j in range(W.shape[1]):
            total = b[j]
            for k in range(x.shape[1]):
                total += x[i, k] * W[k, j]
            out[i, j] = total
    return out


@fixture
def layer_params(rng):
    params = ParamSet()
    params.add("theta.W", THETA, rng.normal(size=(4, 3)))
    params.add("theta.b", THETA, rng.normal(size=3))
    return params


def test_identity_layer():
    out = forward_layer(Tensor([[1.0, 0.0]]), Tensor(np.eye(2)), Tensor(np.zeros(2)), "identity")
    assert out.data.tolist() == [[1.0, 0.0]]


def test_zero_weights_sigmoid_is_half(rng):
    out = forward_layer(Tensor(rng.normal(size=(5, 4))), Tensor(np.zeros((4, 3))), Tensor(np.zeros(3)), "sigmoid")
    assert np.all(out.data == 0.5)


def test_layer_one_dimensional_input(rng):
    W, b = rng.normal(size=(4, 3)), rng.normal(size=3)
    x = rng.normal(size=4)
    out = forward_layer(Tensor(x), Tensor(W), Tensor(b))
    assert out.shape == (3,)
    assert out.data == approx(x @ W + b, abs=1e-12)


@mark.parametrize("shape", [(3, 4, 5), (16, 16, 16), (1, 7, 2)])
def test_layer_matches_naive_loops(rng, shape):
    n, d, m = shape
    x, W, b = rng.normal(size=(n, d)), rng.normal(size=(d, m)), rng.normal(size=m)
    out = forward_layer(Tensor(x), Tensor(W), Tensor(b), "identity")
    assert np.max(np.abs(out.data - _naive_layer(x, W, b))) < 1e-12


def test_layer_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        forward_layer(Tensor(rng.normal(size=(2, 3))), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))


def test_layer_rejects_non_finite_input():
    with pytest.raises(NumericError):
        forward_layer(Tensor([[np.nan, 1.0]]), Tensor(np.eye(2)), Tensor(np.zeros(2)))


def test_softmax_rows(rng):
    out = Tensor(rng.normal(scale=30.0, size=(6, 9))).softmax(axis=-1).data
    assert np.all(np.abs(out.sum(axis=1) - 1.0) < 1e-9)
    assert np.all((out > 0) & (out < 1))


def test_log_softmax_matches_scipy(rng):
    x = rng.normal(size=(4, 7))
    assert Tensor(x).log_softmax(axis=-1).data == approx(log_softmax(x, axis=-1), abs=1e-12)


def test_sigmoid_stays_inside_unit_interval():
    out = Tensor([-1000.0, 0.0, 1000.0]).sigmoid().data
    assert np.all((out > 0) & (out < 1))
    assert out[1] == 0.5


def test_l2_normalize_zero_row():
    out = Tensor([[3.0, 4.0], [0.0, 0.0]]).l2_normalize(axis=-1).data
    assert out.tolist() == [[0.6, 0.8], [0.0, 0.0]]


def test_linear_derivative(rng):
    x = rng.normal(size=(1, 4))
    params = ParamSet()
    w = params.add("theta.w", THETA, rng.normal(size=(4, 1)))
    grads = backward((Tensor(x) @ w).sum(), params)
    assert grads["theta.w"] == approx(x.T, abs=1e-15)


def test_square_derivative(rng):
    params = ParamSet()
    w = params.add("theta.w", THETA, rng.normal(size=5))
    grads = backward(w.square().sum(), params)
    assert grads["theta.w"] == approx(2.0 * w.data)


def test_unreachable_params_get_zero_gradient(rng):
    params = ParamSet()
    w = params.add("theta.w", THETA, rng.normal(size=3))
    params.add("phi.u", PHI, rng.normal(size=(2, 2)))
    grads = backward(w.sum(), params)
    assert np.all(grads["phi.u"] == 0.0)
    assert grads["phi.u"].shape == (2, 2)


def test_backward_needs_scalar(rng):
    params = ParamSet()
    w = params.add("theta.w", THETA, rng.normal(size=3))
    with pytest.raises(ContractError):
        backward(w * 2.0, params)


def test_bias_broadcast_gradient(rng):
    params = ParamSet()
    b = params.add("theta.b", THETA, np.zeros(3))
    x = Tensor(rng.normal(size=(4, 3)))
    grads = backward((x + b).sum(), params)
    assert grads["theta.b"].tolist() == [4.0, 4.0, 4.0]


def test_grad_check_linear(rng, layer_params):
    x = Tensor(rng.normal(size=(3, 4)))
    err = grad_check(lambda: forward_layer(x, layer_params["theta.W"], layer_params["theta.b"]).sum(), layer_params)
    assert err < 1e-10


@mark.parametrize("activation", ["tanh", "relu", "sigmoid", "softmax", "identity"])
def test_grad_check_each_activation(rng, layer_params, activation):
    x = Tensor(rng.normal(size=(3, 4)))
    target = Tensor(rng.normal(size=(3, 3)))

    def loss():
        out = forward_layer(x, layer_params["theta.W"], layer_params["theta.b"], activation)
        return (out * target).sum()

    assert grad_check(loss, layer_params) < 1e-4


def test_grad_check_softmax_cross_entropy(rng, layer_params):
    x = Tensor(rng.normal(size=(5, 4)))
    labels = np.eye(3)[rng.integers(0, 3, size=5)]

    def loss():
        logits = forward_layer(x, layer_params["theta.W"], layer_params["theta.b"])
        return -(logits.log_softmax(axis=-1) * labels).sum()

    assert grad_check(loss, layer_params) < 1e-6


def test_grad_check_concat_and_normalize(rng):
    params = ParamSet()
    a = params.add("psi.a", PSI, rng.normal(size=(2, 3)))
    c = params.add("psi.c", PSI, rng.normal(size=(2, 2)))
    weights = Tensor(rng.normal(size=(2, 5)))
    err = grad_check(lambda: (concat([a, c], axis=1).l2_normalize(axis=-1) * weights).sum(), params)
    assert err < 1e-4


def test_grad_check_negative_control(rng):
    params = ParamSet()
    w = params.add("theta.w", THETA, rng.normal(size=4) + 2.0)

    def wrong_square(t: Tensor) -> Tensor:
        # backward deliberately 10% too large
        return Tensor.from_op(t.data ** 2, (t,), lambda g: (1.1 * 2.0 * t.data * g,), "bad_square")

    assert grad_check(lambda: wrong_square(w).sum(), params) > 1e-2


def test_grad_check_rejects_random_fn(rng):
    params = ParamSet()
    w = params.add("theta.w", THETA, rng.normal(size=3))
    noise = np.random.default_rng(0)
    with pytest.raises(ContractError):
        grad_check(lambda: (w * noise.normal(size=3)).sum(), params)


def test_grad_check_rejects_bad_eps(layer_params):
    with pytest.raises(ContractError):
        grad_check(lambda: layer_params["theta.W"].sum(), layer_params, eps=0.0)


def test_param_set_rejects_duplicates_and_unknown_owner():
    params = ParamSet()
    params.add("theta.w", THETA, np.zeros(2))
    with pytest.raises(ContractError):
        params.add("theta.w", THETA, np.zeros(2))
    with pytest.raises(ContractError):
        params.add("other.w", "omega", np.zeros(2))


def test_frozen_view_blocks_gradients(rng):
    params = ParamSet()
    w = params.add("theta.w", THETA, rng.normal(size=3))
    params.add("phi.u", PHI, rng.normal(size=3))
    view = params.frozen([PHI])
    assert view["theta.w"] is w
    assert view["phi.u"].data is params["phi.u"].data
    grads = backward((view["theta.w"] * view["phi.u"]).sum(), params)
    assert np.all(grads["phi.u"] == 0.0)
    assert grads["theta.w"] == approx(params["phi.u"].data)


def test_init_dense_ranges(rng):
    W, b = init_dense(50, 20, "tanh", rng)
    assert np.all(np.abs(W) <= np.sqrt(6.0 / 70))
    assert np.all(b == 0)
    W, _ = init_dense(50, 20, "relu", rng)
    assert np.all(np.abs(W) <= np.sqrt(6.0 / 50))
    assert np.abs(W).max() > np.sqrt(6.0 / 70)


def test_adam_zero_gradient_is_identity(rng):
    params = ParamSet()
    params.add("theta.w", THETA, rng.normal(size=(3, 2)))
    before = params["theta.w"].data.copy()
    state = AdamState.for_params(params, ["theta.w"])
    adam_step(params, {"theta.w": np.zeros((3, 2))}, state)
    assert np.array_equal(params["theta.w"].data, before)
    assert state.step == 1


def test_adam_first_step_magnitude_is_lr():
    params = ParamSet()
    params.add("theta.w", THETA, np.array([1.0]))
    state = AdamState.for_params(params, ["theta.w"], lr=0.01)
    adam_step(params, {"theta.w": np.array([3.0])}, state)
    assert params["theta.w"].data[0] == approx(1.0 - 0.01, abs=1e-8)


def test_adam_three_step_hand_trace():
    # minimize (w - 3)^2 from w = 0
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    params = ParamSet()
    params.add("theta.w", THETA, np.array([0.0]))
    state = AdamState.for_params(params, ["theta.w"], lr=lr, beta1=b1, beta2=b2, epsilon=eps)

    w, m, v = 0.0, 0.0, 0.0
    for t in range(1, 4):
        g = 2.0 * (w - 3.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        w = w - lr * m_hat / (np.sqrt(v_hat) + eps)

        grad = 2.0 * (params["theta.w"].data - 3.0)
        adam_step(params, {"theta.w": grad}, state)

    assert abs(params["theta.w"].data[0] - w) < 1e-12
    assert state.step == 3


def test_adam_rejects_nan_and_bad_shapes():
    params = ParamSet()
    params.add("theta.w", THETA, np.zeros(2))
    state = AdamState.for_params(params, ["theta.w"])
    with pytest.raises(NumericError):
        adam_step(params, {"theta.w": np.array([np.nan, 0.0])}, state)
    with pytest.raises(ShapeError):
        adam_step(params, {"theta.w": np.zeros(3)}, state)
    assert state.step == 0
