import numpy as np
import pytest
from conftest import naive_conv, numeric_gradient, relative_error

from specklelab.errors import ShapeError, StateError
from specklelab.nn import (
    ConvSpec,
    LayerParams,
    OptimState,
    Tape,
    batchnorm_forward,
    conv2d_forward,
    he_init,
    relu_forward,
    sgd_momentum_step,
)


def conv_params(m, n, k, seed=0, bias=True):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(m) if bias else np.zeros(m)
    return LayerParams(rng.standard_normal((m, n, k, k)), b)


def bn_params(m, seed=0):
    rng = np.random.default_rng(seed)
    p = he_init(ConvSpec(1, m, 1), seed)
    p.bn_scale[:] = rng.uniform(0.5, 2, m)
    p.bn_shift[:] = rng.standard_normal(m)
    return p


def test_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 1, 5, 6))
    p = LayerParams(np.ones((1, 1, 1, 1)), np.zeros(1))
    assert np.array_equal(conv2d_forward(x, p), x)


def test_all_ones_kernel_zero_padding():
    x = np.full((1, 1, 5, 5), 2.0)
    out = conv2d_forward(x, LayerParams(np.ones((1, 1, 3, 3)), np.zeros(1)))
    assert out[0, 0, 2, 2] == 18.0
    assert out[0, 0, 0, 0] == out[0, 0, 4, 4] == 8.0
    assert out[0, 0, 0, 2] == 12.0


def test_conv_matches_naive_4x3x9x9():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 3, 9, 9))
    p = conv_params(2, 3, 3, seed=2)
    assert np.max(np.abs(conv2d_forward(x, p) - naive_conv(x, p.weights, p.bias))) < 1e-12


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros((1, 2, 4, 4)), conv_params(1, 3, 3))


@pytest.mark.parametrize("k", [1, 3, 5])
def test_same_size(k):
    x = np.zeros((2, 3, 7, 11))
    assert conv2d_forward(x, conv_params(4, 3, k)).shape == (2, 4, 7, 11)


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        ConvSpec(1, 1, 4)


def test_relu_values_and_subgradient():
    x = np.array([-1.0, 0.0, 3.5]).reshape(1, 1, 1, 3)
    tape = Tape()
    out = relu_forward(x, tape)
    assert out.ravel().tolist() == [0.0, 0.0, 3.5]
    assert tape.backward(np.ones_like(x)).ravel().tolist() == [0.0, 0.0, 1.0]


def test_bn_constant_input_gives_shift():
    p = bn_params(3)
    out = batchnorm_forward(np.full((2, 3, 4, 4), 7.0), p, "train")
    assert np.allclose(out, p.bn_shift[None, :, None, None], atol=0, rtol=0)


def test_bn_train_moments():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 2, 6, 5)) * [[[[3.0]], [[0.01]]]] + 2
    p = bn_params(2, seed=1)
    p.bn_epsilon = 1e-3
    out = batchnorm_forward(x, p, "train")
    v = x.var(axis=(0, 2, 3))
    for ch in range(2):
        assert abs(out[:, ch].mean() - p.bn_shift[ch]) < 1e-10
        want = p.bn_scale[ch] ** 2 * v[ch] / (v[ch] + p.bn_epsilon)
        assert abs(out[:, ch].var() - want) < 1e-6


def test_bn_infer_identity_stats():
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
    p = he_init(ConvSpec(1, 3, 1), 0)
    out = batchnorm_forward(x, p, "infer")
    assert np.allclose(out, x / np.sqrt(1 + p.bn_epsilon), rtol=0, atol=1e-15)


def test_bn_running_average_update():
    p = bn_params(1)
    x = np.arange(8.0).reshape(2, 1, 2, 2)
    batchnorm_forward(x, p, "train")
    assert p.bn_running_mean[0] == pytest.approx(0.1 * 3.5)
    assert p.bn_running_var[0] == pytest.approx(0.9 + 0.1 * x.var())


def test_bn_train_infer_consistency():
    x = np.random.default_rng(2).standard_normal((4, 3, 5, 5))
    p = bn_params(3)
    train_out = batchnorm_forward(x, p, "train")
    p.bn_running_mean[:] = x.mean(axis=(0, 2, 3))
    p.bn_running_var[:] = x.var(axis=(0, 2, 3))
    assert np.max(np.abs(batchnorm_forward(x, p, "infer") - train_out)) < 1e-6


def test_bn_single_value_rejected():
    with pytest.raises(ValueError):
        batchnorm_forward(np.zeros((1, 2, 1, 1)), bn_params(2), "train")


def test_backward_without_forward():
    with pytest.raises(StateError):
        Tape().backward(np.zeros(1))


def test_hand_computed_linear_layer():
    # 1x1 conv on a 1x1x2x2 input, loss = mean((w*x + b - t)^2)
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    t = np.array([[[[0.0, 1.0], [1.0, 2.0]]]])
    p = LayerParams(np.array([[[[0.5]]]]), np.array([0.25]))
    tape = Tape()
    out = conv2d_forward(x, p, tape=tape, name="l")
    r = out - t  # [0.75, 0.25, 0.75, 0.25]
    dx = tape.backward(r / 2)  # d mean(r^2) / d out = 2 r / 4
    assert tape.grads["l.weights"].item() == pytest.approx((0.75 * 1 + 0.25 * 2 + 0.75 * 3 + 0.25 * 4) / 2)
    assert tape.grads["l.bias"].item() == pytest.approx(1.0)
    assert dx.ravel().tolist() == pytest.approx([0.1875, 0.0625, 0.1875, 0.0625])


def chain(x, layers, tape=None):
    h = conv2d_forward(x, layers[0], tape=tape, name="c0")
    h = batchnorm_forward(h, layers[0], "train", tape=tape, name="c0")
    h = relu_forward(h, tape)
    h = conv2d_forward(h, layers[1], tape=tape, name="c1")
    return h


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    layers = [he_init(ConvSpec(2, 3, 3), 1), he_init(ConvSpec(3, 2, 3), 2, batchnorm=False)]
    layers[0].bn_scale[:] = rng.uniform(0.5, 1.5, 3)
    layers[0].bn_shift[:] = rng.uniform(0.1, 0.5, 3)
    x = rng.standard_normal((2, 2, 5, 4))
    up = rng.standard_normal((2, 2, 5, 4))

    def f():
        return float(np.sum(chain(x, layers) * up))

    tape = Tape()
    chain(x, layers, tape)
    dx = tape.backward(up)
    for i, layer in enumerate(layers):
        for name, arr in layer.learnable().items():
            num = numeric_gradient(f, arr)
            assert relative_error(tape.grads[f"c{i}.{name}"], num) < 1e-4, (i, name)
    assert relative_error(dx, numeric_gradient(f, x)) < 1e-4


def test_bn_infer_mode_gradient():
    rng = np.random.default_rng(3)
    p = bn_params(2)
    p.bn_running_mean[:] = [0.3, -0.2]
    p.bn_running_var[:] = [2.0, 0.5]
    x = rng.standard_normal((1, 2, 3, 3))
    up = rng.standard_normal(x.shape)
    tape = Tape()
    batchnorm_forward(x, p, "infer", tape=tape)
    dx = tape.backward(up)

    def f():
        return float(np.sum(batchnorm_forward(x, p, "infer") * up))

    assert relative_error(dx, numeric_gradient(f, x)) < 1e-6
    assert relative_error(tape.grads["bn.bn_scale"], numeric_gradient(f, p.bn_scale)) < 1e-6


def test_zero_upstream_gives_zero_gradients():
    layers = [he_init(ConvSpec(1, 2, 3), 1), he_init(ConvSpec(2, 1, 3), 2, batchnorm=False)]
    tape = Tape()
    out = chain(np.random.default_rng(0).standard_normal((2, 1, 4, 4)), layers, tape)
    tape.backward(np.zeros_like(out))
    assert all(np.all(g == 0) for g in tape.grads.values())


def test_upstream_shape_checked():
    tape = Tape()
    conv2d_forward(np.zeros((1, 1, 3, 3)), conv_params(1, 1, 3), tape=tape)
    with pytest.raises(ShapeError):
        tape.backward(np.zeros((1, 1, 3, 4)))


def test_sgd_vanilla_reduction():
    rng = np.random.default_rng(0)
    p = rng.standard_normal((3, 4))
    g = rng.standard_normal((3, 4))
    expect = p - 0.1 * g
    params = {"w": p.copy()}
    sgd_momentum_step(params, {"w": g}, OptimState(0.1, 0.0))
    assert params["w"].tobytes() == expect.tobytes()


def test_sgd_zero_gradient_fixed_point():
    params = {"w": np.arange(4.0)}
    state = OptimState(0.5, 0.9)
    for _ in range(5):
        sgd_momentum_step(params, {"w": np.zeros(4)}, state)
    assert params["w"].tolist() == [0.0, 1.0, 2.0, 3.0]


def test_sgd_momentum_two_steps():
    g = np.array([1.0, -2.0])
    params = {"w": np.zeros(2)}
    state = OptimState(1.0, 0.9)
    sgd_momentum_step(params, {"w": g}, state)
    sgd_momentum_step(params, {"w": g}, state)
    assert state.velocity["w"] == pytest.approx(1.9 * g)
    assert params["w"] == pytest.approx(-g * 2.9)


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeError):
        sgd_momentum_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, OptimState())


def test_he_init():
    spec = ConvSpec(50, 40, 7)
    a, b = he_init(spec, 9), he_init(spec, 9)
    assert a.weights.tobytes() == b.weights.tobytes()
    assert np.all(a.bias == 0) and np.all(a.bn_scale == 1) and np.all(a.bn_shift == 0)
    target = 2 / (50 * 49)
    assert abs(a.weights.var() - target) / target < 0.05
