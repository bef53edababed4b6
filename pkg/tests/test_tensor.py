import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vigil import backend, tensor as T
from vigil.errors import ConfigurationError, DimensionError

from oracles import central_difference, conv2d_nested, depthwise_nested, rel_error

pytestmark = pytest.mark.usefixtures("kernel_backend")


def f32(a):
    return np.asarray(a, dtype=np.float32)


# -- conv2d ----------------------------------------------------------------------

def test_conv_all_ones_kernel_is_window_sum():
    x = f32(np.arange(1, 10).reshape(1, 1, 3, 3))
    out = T.conv2d_forward(x, np.ones((1, 1, 3, 3), np.float32), [0.0], 1, 0)
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 45


def test_conv_identity_1x1():
    x = f32(np.random.default_rng(0).standard_normal((2, 1, 5, 4)))
    out = T.conv2d_forward(x, np.ones((1, 1, 1, 1)), [0.0], 1, 0)
    np.testing.assert_array_equal(out, x)


def test_conv_matches_nested_loop_oracle():
    rng = np.random.default_rng(1)
    x = f32(rng.standard_normal((1, 2, 4, 4)))
    k = f32(rng.standard_normal((3, 2, 3, 3)))
    b = f32(rng.standard_normal(3))
    np.testing.assert_allclose(T.conv2d_forward(x, k, b, 1, 1), conv2d_nested(x, k, b, 1, 1), atol=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 2), st.integers(1, 3), st.integers(1, 3),
       st.sampled_from([1, 3, 5]), st.integers(1, 2), st.integers(0, 2), st.integers(5, 8), st.integers(5, 8))
def test_conv_oracle_property(seed, n, c_in, c_out, k, stride, pad, h, w):
    rng = np.random.default_rng(seed)
    if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride:
        with pytest.raises(ConfigurationError):
            T.conv2d_forward(np.zeros((n, c_in, h, w), np.float32),
                             np.zeros((c_out, c_in, k, k), np.float32), np.zeros(c_out), stride, pad)
        return
    x = f32(rng.standard_normal((n, c_in, h, w)))
    kern = f32(rng.standard_normal((c_out, c_in, k, k)))
    b = f32(rng.standard_normal(c_out))
    out = T.conv2d_forward(x, kern, b, stride, pad)
    assert out.shape == (n, c_out, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)
    np.testing.assert_allclose(out, conv2d_nested(x, kern, b, stride, pad), atol=1e-5)


def test_conv_channel_mismatch_names_axis():
    with pytest.raises(DimensionError) as exc:
        T.conv2d_forward(np.zeros((1, 3, 4, 4)), np.zeros((2, 2, 3, 3)), np.zeros(2))
    assert exc.value.axis == "channels"
    assert "channels" in str(exc.value)


def test_conv_non_integral_extent():
    with pytest.raises(ConfigurationError):
        T.conv2d_forward(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)), [0.0], stride=2, padding=0)


def test_conv_rejects_even_kernel():
    with pytest.raises(ConfigurationError):
        T.conv2d_forward(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 2, 2)), [0.0])


# -- depthwise / pointwise -------------------------------------------------------------

def test_depthwise_center_tap_is_identity():
    rng = np.random.default_rng(2)
    for k in (3, 5):
        x = f32(rng.standard_normal((2, 3, 6, 7)))
        kern = np.zeros((3, 1, k, k), np.float32)
        kern[:, 0, k // 2, k // 2] = 1
        np.testing.assert_array_equal(T.depthwise_conv2d_forward(x, kern, np.zeros(3), 1, k // 2), x)


def test_depthwise_window_sums_per_channel():
    rng = np.random.default_rng(3)
    x = f32(rng.integers(0, 10, (1, 2, 3, 3)))
    out = T.depthwise_conv2d_forward(x, np.ones((2, 1, 3, 3)), np.zeros(2), 1, 0)
    np.testing.assert_allclose(out[0, :, 0, 0], x[0].sum(axis=(1, 2)))
    np.testing.assert_allclose(out, depthwise_nested(x, np.ones((2, 1, 3, 3)), np.zeros(2), 1, 0))


def test_depthwise_channels_independent():
    rng = np.random.default_rng(4)
    x = f32(rng.standard_normal((1, 3, 5, 5)))
    k = f32(rng.standard_normal((3, 1, 3, 3)))
    b = f32([0.5, -1.5, 2.0])
    full = T.depthwise_conv2d_forward(x, k, b, 1, 1)
    x0 = x.copy()
    x0[:, 1] = 0
    part = T.depthwise_conv2d_forward(x0, k, b, 1, 1)
    np.testing.assert_array_equal(part[:, 1], np.full_like(part[:, 1], -1.5))
    np.testing.assert_array_equal(part[:, [0, 2]], full[:, [0, 2]])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([3, 5]), st.integers(1, 2))
def test_depthwise_oracle_property(seed, k, stride):
    rng = np.random.default_rng(seed)
    h = w = k + 2 * stride
    x = f32(rng.standard_normal((2, 3, h, w)))
    kern = f32(rng.standard_normal((3, 1, k, k)))
    b = f32(rng.standard_normal(3))
    pad = k // 2
    np.testing.assert_allclose(T.depthwise_conv2d_forward(x, kern, b, stride, pad),
                               depthwise_nested(x, kern, b, stride, pad), atol=1e-5)


def test_depthwise_channel_count_mismatch():
    with pytest.raises(DimensionError):
        T.depthwise_conv2d_forward(np.zeros((1, 3, 4, 4)), np.zeros((2, 1, 3, 3)), np.zeros(2))


def test_pointwise_identity_and_sum():
    rng = np.random.default_rng(5)
    x = f32(rng.standard_normal((2, 4, 3, 3)))
    eye = np.eye(4, dtype=np.float32)[:, :, None, None]
    np.testing.assert_array_equal(T.pointwise_conv2d_forward(x, eye, np.zeros(4)), x)
    a, b = 1.25, -3.5
    out = T.pointwise_conv2d_forward(f32([[[[a]], [[b]]]]), np.ones((1, 2, 1, 1)), [0.0])
    assert out[0, 0, 0, 0] == a + b


def test_pointwise_equals_conv2d_bitwise():
    rng = np.random.default_rng(6)
    x = f32(rng.standard_normal((2, 5, 4, 6)))
    k = f32(rng.standard_normal((3, 5, 1, 1)))
    b = f32(rng.standard_normal(3))
    np.testing.assert_array_equal(T.pointwise_conv2d_forward(x, k, b), T.conv2d_forward(x, k, b, 1, 0))


@pytest.mark.parametrize("seed", range(5))
def test_separable_equals_composed_standard_conv(seed):
    rng = np.random.default_rng(seed)
    c_in, c_out, k = 3, 4, 3
    x = f32(rng.standard_normal((2, c_in, 6, 6)))
    dw = f32(rng.standard_normal((c_in, 1, k, k)))
    pw = f32(rng.standard_normal((c_out, c_in, 1, 1)))
    sep = T.pointwise_conv2d_forward(T.depthwise_conv2d_forward(x, dw, np.zeros(c_in), 1, 1), pw, np.zeros(c_out))
    composed = pw[:, :, 0, 0][:, :, None, None] * dw[None, :, 0]
    std = T.conv2d_forward(x, composed, np.zeros(c_out), 1, 1)
    assert np.max(np.abs(sep - std)) < 1e-4


# -- batch norm, relu, pooling, fc, softmax, sigmoid -----------------------------------

def test_batchnorm_two_values():
    x = f32([1, 3]).reshape(1, 1, 1, 2)
    out, mean, var = T.batchnorm_forward(x, [1.0], [0.0], [0.0], [1.0], 1e-5, training=True)
    np.testing.assert_allclose(out.ravel(), [-1.0, 1.0], atol=1e-3)
    np.testing.assert_allclose(mean, [0.2], rtol=1e-6)
    np.testing.assert_allclose(var, [0.9 + 0.1 * 1.0], rtol=1e-6)


def test_batchnorm_zero_gamma_gives_beta():
    x = f32(np.random.default_rng(7).standard_normal((2, 3, 4, 4)))
    beta = f32([0.5, -1.0, 2.0])
    for training in (True, False):
        out, _, _ = T.batchnorm_forward(x, np.zeros(3), beta, np.zeros(3), np.ones(3), training=training)
        np.testing.assert_allclose(out, np.broadcast_to(beta[None, :, None, None], x.shape))


def test_batchnorm_inference_identity_stats():
    x = f32(np.random.default_rng(8).standard_normal((2, 2, 3, 3)))
    out, mean, var = T.batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), 1e-5)
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), rtol=1e-6)
    np.testing.assert_array_equal(mean, 0)
    np.testing.assert_array_equal(var, 1)


def test_batchnorm_training_needs_two_values():
    with pytest.raises(ConfigurationError):
        T.batchnorm_forward(np.ones((1, 1, 1, 1)), [1.0], [0.0], [0.0], [1.0], training=True)


def test_relu():
    np.testing.assert_array_equal(T.relu(f32([-1, 0, 2])), [0, 0, 2])
    x = f32([0.0, 1.5, 3.0])
    np.testing.assert_array_equal(T.relu(x), x)
    y = f32(np.random.default_rng(0).standard_normal(20))
    np.testing.assert_array_equal(T.relu(T.relu(y)), T.relu(y))


def test_pool_small_cases():
    x = f32([[1, 2], [3, 4]]).reshape(1, 1, 2, 2)
    assert T.pool2d(x, "max", 2, 2)[0, 0, 0, 0] == 4
    assert T.pool2d(x, "average", 2, 2)[0, 0, 0, 0] == 2.5
    const = np.full((1, 2, 6, 6), 3.25, np.float32)
    for mode in ("max", "average"):
        np.testing.assert_array_equal(T.pool2d(const, mode, 3, 3), 3.25)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 3), st.integers(1, 3))
def test_pool_extent_formula(h, w, k, s):
    x = np.zeros((1, 1, h, w), np.float32)
    if h < k or w < k or (h - k) % s or (w - k) % s:
        with pytest.raises(ConfigurationError):
            T.pool2d(x, "max", k, s)
    else:
        assert T.pool2d(x, "average", k, s).shape == (1, 1, (h - k) // s + 1, (w - k) // s + 1)


def test_pool_rectangular_global_window():
    x = f32(np.random.default_rng(1).standard_normal((2, 3, 4, 6)))
    out = T.pool2d(x, "average", (4, 6), 1)
    np.testing.assert_allclose(out[:, :, 0, 0], x.mean(axis=(2, 3)), rtol=1e-5)


def test_fully_connected():
    x = f32([[1, 2]])
    np.testing.assert_array_equal(T.fully_connected_forward(x, [[3, 4]], [5]), [[16]])
    z = f32(np.random.default_rng(0).standard_normal((3, 4)))
    np.testing.assert_array_equal(T.fully_connected_forward(z, np.eye(4), np.zeros(4)), z)
    np.testing.assert_array_equal(T.fully_connected_forward(np.zeros((2, 4)), np.ones((3, 4)), [1, 2, 3]),
                                  [[1, 2, 3], [1, 2, 3]])


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-12)
    np.testing.assert_allclose(T.softmax([np.log(2.0), 0.0]), [2 / 3, 1 / 3], atol=1e-12)
    big = T.softmax(f32([1000.0, 999.0]))
    assert np.all(np.isfinite(big))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-80, 80).map(lambda v: v / 8), min_size=2, max_size=10), st.floats(-50, 50))
def test_softmax_properties(logits, shift):
    z = np.asarray(logits)
    p = T.softmax(z)
    assert abs(p.sum() - 1) < 1e-6
    assert np.all(p > 0) and np.all(p < 1)
    assert np.argmax(p) == np.argmax(z)
    np.testing.assert_allclose(T.softmax(z + shift), p, atol=1e-9)


def test_sigmoid():
    assert T.sigmoid(0.0) == 0.5
    assert abs(T.sigmoid(4.0) - 0.9820) < 1e-4
    for v in (-7.5, -1.0, 0.3, 12.0):
        assert abs(T.sigmoid(-v) - (1 - T.sigmoid(v))) < 1e-12


# -- backward ------------------------------------------------------------------------

def test_relu_backward_example():
    g = T.layer_backward("relu", f32([-1, 2]), upstream=f32([5, 7]))
    np.testing.assert_array_equal(g.input_grad, [0, 7])


def test_fc_backward_example():
    g = T.layer_backward("fc", f32([[1, 2]]), f32([[3, 4]]), f32([0]), upstream=f32([[1]]))
    np.testing.assert_array_equal(g.param_grads["weights"], [[1, 2]])
    np.testing.assert_array_equal(g.param_grads["bias"], [1])
    np.testing.assert_array_equal(g.input_grad, [[3, 4]])


def test_backward_rejects_wrong_upstream_shape():
    with pytest.raises(DimensionError):
        T.conv2d_backward(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)), [0.0], 1, 0, np.zeros((1, 1, 4, 4)))


def test_backends_agree_on_forward():
    rng = np.random.default_rng(11)
    x = f32(rng.standard_normal((2, 3, 9, 9)))
    k = f32(rng.standard_normal((3, 1, 3, 3)))
    kc = f32(rng.standard_normal((4, 3, 3, 3)))
    results = {}
    for name in backend.available():
        with backend.use(name):
            results[name] = (
                T.depthwise_conv2d_forward(x, k, np.zeros(3), 2, 1),
                T.conv2d_forward(x, kc, np.zeros(4), 2, 1),
                T.pool2d(x, "max", 3, 2),
                T.pool2d(x, "average", 3, 3),
            )
    ref = results["python"]
    for outs in results.values():
        for a, b in zip(outs, ref):
            np.testing.assert_array_equal(a, b)
