"""Unit tests for the dense MLP numerics layer."""

import numpy as np
import pytest

from deskdiar.autodiff import (
    AdamState,
    DivergenceError,
    Layer,
    MlpGrads,
    MlpParams,
    ShapeError,
    StaleTapeError,
    adam_init,
    adam_step,
    gp_param_gradient,
    input_gradient,
    mlp_backward,
    mlp_forward,
)
from oracles import (
    assert_grads_close,
    fd_input_grads,
    fd_param_grads,
    random_params,
    straightline_mlp,
)


def linear_net(*mats, biases=None):
    layers = []
    for i, w in enumerate(mats):
        w = np.asarray(w, dtype=float)
        b = np.zeros(w.shape[1]) if biases is None else np.asarray(biases[i])
        layers.append(Layer(weight=w, bias=b, activation="linear"))
    return MlpParams(layers=tuple(layers))


# ---------------------------------------------------------------- forward

def test_forward_identity_layer():
    net = linear_net(np.eye(2))
    out, _ = mlp_forward(net, np.array([[1.0, 2.0]]))
    assert np.array_equal(out, np.array([[1.0, 2.0]]))


def test_forward_relu_dead_zone_passes_only_bias():
    # layer 1 pre-activations all negative -> its output is zero, so the
    # network output is exactly the layer-2 bias
    l1 = Layer(weight=-np.eye(3), bias=np.full(3, -1.0), activation="relu")
    l2 = Layer(weight=np.ones((3, 2)), bias=np.array([0.5, -0.25]),
               activation="linear")
    net = MlpParams(layers=(l1, l2))
    out, _ = mlp_forward(net, np.array([[0.3, 1.2, 2.0]]))
    assert np.allclose(out, [[0.5, -0.25]], atol=0)


def test_forward_matches_straightline_evaluator(rng):
    net = random_params(rng, [8, 4, 2])
    x = rng.standard_normal((5, 8))
    out, _ = mlp_forward(net, x)
    assert np.abs(out - straightline_mlp(net, x)).max() <= 1e-12


def test_forward_with_softmax_tail_matches_straightline(rng):
    net = random_params(rng, [6, 5, 7], final="softmax-tail", tail=4)
    x = rng.standard_normal((3, 6))
    out, _ = mlp_forward(net, x)
    assert np.abs(out - straightline_mlp(net, x)).max() <= 1e-12


def test_forward_deterministic(rng):
    net = random_params(rng, [5, 9, 3])
    x = rng.standard_normal((4, 5))
    a, _ = mlp_forward(net, x)
    b, _ = mlp_forward(net, x)
    assert np.array_equal(a, b)


def test_forward_dim_mismatch_raises(rng):
    net = random_params(rng, [5, 3])
    with pytest.raises(ShapeError):
        mlp_forward(net, np.zeros((2, 4)))


def test_params_dim_chain_validated(rng):
    l1 = Layer(weight=np.zeros((3, 4)), bias=np.zeros(4))
    l2 = Layer(weight=np.zeros((5, 2)), bias=np.zeros(2))
    with pytest.raises(ShapeError):
        MlpParams(layers=(l1, l2))


def test_softmax_tail_only_on_final_layer():
    l1 = Layer(weight=np.zeros((3, 4)), bias=np.zeros(4),
               activation="softmax-tail", tail=2)
    l2 = Layer(weight=np.zeros((4, 2)), bias=np.zeros(2))
    with pytest.raises(ShapeError):
        MlpParams(layers=(l1, l2))


# ---------------------------------------------------------------- backward

def test_backward_scalar_linear_case():
    w = np.array([[2.0], [3.0], [-1.0]])
    net = linear_net(w)
    x = np.array([[0.5, -1.5, 4.0]])
    _, tape = mlp_forward(net, x)
    grads, dx = mlp_backward(tape, np.ones((1, 1)))
    assert np.allclose(grads.weights[0], x.T, atol=0)
    assert np.allclose(dx, w.T, atol=0)


def test_backward_matches_finite_differences(rng):
    net = random_params(rng, [8, 16, 1])
    x = rng.standard_normal((6, 8))
    upstream = rng.standard_normal((6, 1))

    def objective(p):
        out, _ = mlp_forward(p, x)
        return float((out * upstream).sum())

    _, tape = mlp_forward(net, x)
    grads, _ = mlp_backward(tape, upstream)
    fd = fd_param_grads(objective, net, h=1e-5)
    assert_grads_close(grads, fd, rtol=1e-5, atol=1e-8)


def test_backward_softmax_tail_cross_entropy_closed_form(rng):
    # pure softmax layer: input gradient of CE(target one-hot) must be
    # exactly softmax(x) - onehot
    k = 5
    net = MlpParams(layers=(Layer(weight=np.eye(k), bias=np.zeros(k),
                                  activation="softmax-tail", tail=k),))
    x = rng.standard_normal((3, k))
    probs, tape = mlp_forward(net, x)
    onehot = np.zeros((3, k))
    onehot[np.arange(3), [0, 2, 4]] = 1.0
    # upstream of CE w.r.t. probabilities
    _, dx = mlp_backward(tape, -onehot / probs)
    assert np.abs(dx - (probs - onehot)).max() <= 1e-12
    # and the logit-injection path gives the same answer
    _, dx2 = mlp_backward(tape, probs - onehot,
                          tail_upstream_is_logit_grad=True)
    assert np.abs(dx2 - dx).max() <= 1e-12


def test_backward_stale_tape_detected(rng):
    net = random_params(rng, [4, 6, 2])
    x = rng.standard_normal((3, 4))
    _, tape = mlp_forward(net, x)
    net.layers[0].weight[0, 0] += 123.0  # in-place mutation
    with pytest.raises(StaleTapeError):
        mlp_backward(tape, np.ones((3, 2)))


def test_backward_upstream_shape_checked(rng):
    net = random_params(rng, [4, 2])
    _, tape = mlp_forward(net, rng.standard_normal((3, 4)))
    with pytest.raises(ShapeError):
        mlp_backward(tape, np.ones((3, 3)))


def test_gradient_property_suite_50_seeds():
    # randomized nets up to 3 hidden layers vs central finite differences
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n_hidden = int(rng.integers(1, 4))
        dims = [int(rng.integers(2, 6)) for _ in range(n_hidden + 2)]
        net = random_params(rng, dims)
        x = rng.standard_normal((3, dims[0]))
        upstream = rng.standard_normal((3, dims[-1]))

        def objective(p):
            out, _ = mlp_forward(p, x)
            return float((out * upstream).sum())

        _, tape = mlp_forward(net, x)
        grads, _ = mlp_backward(tape, upstream)
        assert_grads_close(grads, fd_param_grads(objective, net), rtol=1e-4,
                           atol=1e-7)


# ----------------------------------------------------------- input gradient

def test_input_gradient_linear_network_is_weight_product(rng):
    w1 = rng.standard_normal((4, 3))
    w2 = rng.standard_normal((3, 1))
    net = linear_net(w1, w2)
    product = (w1 @ w2).ravel()
    xs = rng.standard_normal((10, 4))
    g = input_gradient(net, xs)
    assert np.abs(g - product).max() <= 1e-12
    # constant in x
    assert np.abs(g - g[0]).max() < 1e-12


def test_input_gradient_matches_finite_differences(rng):
    net = random_params(rng, [5, 7, 6, 1])
    x = rng.standard_normal((4, 5))

    g = input_gradient(net, x)
    for i in range(x.shape[0]):
        def f(row, i=i):
            xx = x.copy()
            xx[i] = row[0]
            out, _ = mlp_forward(net, xx)
            return float(out[i, 0])
        fd = fd_input_grads(lambda xx: float(mlp_forward(net, xx)[0][i, 0]), x)
        assert np.abs(g[i] - fd[i]).max() <= 1e-7 + 1e-5 * np.abs(fd[i]).max()


def test_input_gradient_at_shifted_kink_matches_mask_product():
    # pre-activation sits exactly 1e-3 above the kink: the unit is active
    # and the gradient is the masked weight product
    w1 = np.eye(3)
    b1 = np.array([-1.0, -2.0, 5.0])
    w2 = np.array([[1.5], [-2.0], [0.5]])
    net = MlpParams(layers=(
        Layer(weight=w1, bias=b1, activation="relu"),
        Layer(weight=w2, bias=np.zeros(1), activation="linear"),
    ))
    x = np.array([[1.0 + 1e-3, 2.0 + 1e-3, -5.0 + 1e-3]])
    mask = (x @ w1 + b1 > 0).astype(float).ravel()
    expected = (w1 * mask) @ w2
    g = input_gradient(net, x)
    assert np.abs(g - expected.ravel()).max() <= 1e-12


def test_input_gradient_requires_scalar_output(rng):
    net = random_params(rng, [4, 3, 2])
    with pytest.raises(ShapeError):
        input_gradient(net, rng.standard_normal((2, 4)))


# ------------------------------------------------- gradient-penalty gradient

def test_gp_zero_on_unit_norm_linear_network():
    w1 = np.array([[0.6, 0.0], [0.8, 0.0], [0.0, 1.0]])  # first col unit norm
    w2 = np.array([[1.0], [0.0]])
    net = linear_net(w1, w2)  # product = [0.6, 0.8, 0.0], norm 1
    value, grads = gp_param_gradient(net, np.zeros((4, 3)))
    assert value <= 1e-12
    assert max(np.abs(g).max() for g in grads.weights) <= 1e-9


def test_gp_single_layer_closed_form(rng):
    w = rng.standard_normal((5, 1))
    w *= 1.5 / np.linalg.norm(w)
    net = linear_net(w)
    value, grads = gp_param_gradient(net, rng.standard_normal((1, 5)))
    norm = float(np.linalg.norm(w))
    assert abs(value - (norm - 1.0) ** 2) <= 1e-12
    hand = 2.0 * (norm - 1.0) * w / norm
    assert np.abs(grads.weights[0] - hand).max() <= 1e-12
    assert np.abs(grads.biases[0]).max() == 0.0


def test_gp_matches_finite_differences(rng):
    net = random_params(rng, [6, 8, 5, 1])
    x_hat = rng.standard_normal((4, 6))
    value, grads = gp_param_gradient(net, x_hat)
    fd = fd_param_grads(lambda p: gp_param_gradient(p, x_hat)[0], net)
    assert_grads_close(grads, fd, rtol=1e-4, atol=1e-7)
    assert value >= 0.0


def test_gp_bias_gradients_are_zero(rng):
    net = random_params(rng, [4, 6, 1])
    _, grads = gp_param_gradient(net, rng.standard_normal((5, 4)))
    assert all(np.abs(b).max() == 0.0 for b in grads.biases)


def test_gp_zero_gradient_row_stays_finite():
    # dead ReLU wipes the input gradient; the eps inside the square root
    # keeps the parameter gradient finite
    l1 = Layer(weight=np.eye(2), bias=np.full(2, -10.0), activation="relu")
    l2 = Layer(weight=np.ones((2, 1)), bias=np.zeros(1), activation="linear")
    net = MlpParams(layers=(l1, l2))
    value, grads = gp_param_gradient(net, np.zeros((3, 2)))
    assert np.isfinite(value)
    assert all(np.isfinite(g).all() for g in grads.weights)
    assert abs(value - 1.0) < 1e-5  # (0 - 1)^2 per row, up to the eps guard


def test_gp_requires_scalar_output(rng):
    net = random_params(rng, [4, 3, 2])
    with pytest.raises(ShapeError):
        gp_param_gradient(net, rng.standard_normal((2, 4)))


# -------------------------------------------------------------------- adam

def test_adam_zero_gradient_is_fixed_point(rng):
    net = random_params(rng, [4, 3])
    state = adam_init(net)
    zero = MlpGrads.zeros_like(net)
    updated, state = adam_step(state, net, zero)
    for a, b in zip(updated.layers, net.layers):
        assert np.array_equal(a.weight, b.weight)
        assert np.array_equal(a.bias, b.bias)
    assert state.step == 1


def test_adam_single_step_hand_computation(rng):
    # from zeroed moments the bias-corrected update is
    # -alpha * g / (|g| + eps), entrywise
    net = random_params(rng, [3, 2])
    alpha, eps = 1e-2, 1e-8
    state = adam_init(net, alpha=alpha, beta1=0.5, beta2=0.9, eps=eps)
    g = MlpGrads(weights=[rng.standard_normal((3, 2))],
                 biases=[rng.standard_normal(2)])
    updated, _ = adam_step(state, net, g)
    expect_w = net.layers[0].weight - alpha * g.weights[0] / (
        np.abs(g.weights[0]) + eps)
    expect_b = net.layers[0].bias - alpha * g.biases[0] / (
        np.abs(g.biases[0]) + eps)
    assert np.abs(updated.layers[0].weight - expect_w).max() <= 1e-12
    assert np.abs(updated.layers[0].bias - expect_b).max() <= 1e-12


def test_adam_converges_on_quadratic(rng):
    start = rng.standard_normal((4, 2))
    target = start + 2.0  # uniform offset: no coordinate crosses in 200 steps
    net = linear_net(start)
    state = adam_init(net, alpha=0.008)
    dists = []
    for _ in range(200):
        w = net.layers[0].weight
        g = MlpGrads(weights=[2.0 * (w - target)],
                     biases=[np.zeros(2)])
        net, state = adam_step(state, net, g)
        dists.append(float(np.linalg.norm(net.layers[0].weight - target)))
    tail = dists[10:]
    assert all(b < a for a, b in zip(tail, tail[1:]))
    assert dists[-1] < 0.5 * dists[10]


def test_adam_rejects_non_finite_gradients(rng):
    net = random_params(rng, [3, 2])
    g = MlpGrads.zeros_like(net)
    g.weights[0][0, 0] = np.nan
    with pytest.raises(DivergenceError, match="layer 0"):
        adam_step(adam_init(net), net, g)


def test_adam_rejects_shape_mismatch(rng):
    net = random_params(rng, [3, 2])
    g = MlpGrads(weights=[np.zeros((2, 3))], biases=[np.zeros(2)])
    with pytest.raises(ShapeError):
        adam_step(adam_init(net), net, g)
