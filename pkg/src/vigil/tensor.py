"""Forward and backward math for every layer kind the network uses.

Tensors are plain ``numpy`` arrays in ``(N, C, H, W)`` order, ``float32`` by
default. Functions are pure: they never modify their arguments. Backward
functions take the same inputs as the forward call plus the upstream gradient
and recompute whatever intermediate values they need.

``float64`` inputs are accepted and keep their precision, which lets gradient
checks run the forward pass in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import ConfigurationError, DimensionError

KERNEL_SIZES = (1, 3, 5)
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class LayerGrads:
    input_grad: np.ndarray
    param_grads: dict[str, np.ndarray] = field(default_factory=dict)


def as_tensor(x, rank=4, name="input"):
    """Return ``x`` as a C-contiguous float array of the given rank."""
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float32)
    if x.ndim != rank:
        raise DimensionError(f"{name}: expected rank {rank}, got shape {x.shape}", axis="rank")
    return np.ascontiguousarray(x)


def output_extent(size, k, stride, padding, axis="height"):
    """Closed-form output extent ``(size + 2*padding - k) / stride + 1``."""
    if stride < 1:
        raise ConfigurationError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ConfigurationError(f"padding must be non-negative, got {padding}")
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"{axis}: ({size} + 2*{padding} - {k}) / {stride} + 1 is not a positive integer"
        )
    return span // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _unpad(x, padding):
    if padding == 0:
        return x
    return np.ascontiguousarray(x[:, :, padding:-padding, padding:-padding])


def _check_kernel(kernels, expected_in, depthwise=False):
    if kernels.ndim != 4:
        raise DimensionError(f"kernels: expected rank 4, got shape {kernels.shape}", axis="rank")
    k = kernels.shape[2]
    if kernels.shape[3] != k or k not in KERNEL_SIZES:
        raise ConfigurationError(f"kernel must be square with size in {KERNEL_SIZES}, got {kernels.shape[2:]}")
    if depthwise:
        if kernels.shape[1] != 1:
            raise DimensionError(f"depthwise kernels need shape C x 1 x k x k, got {kernels.shape}",
                                 axis="kernel_in_channels")
        if kernels.shape[0] != expected_in:
            raise DimensionError(
                f"channels: depthwise kernels cover {kernels.shape[0]} channels, input has {expected_in}",
                axis="channels")
    elif kernels.shape[1] != expected_in:
        raise DimensionError(
            f"channels: kernels expect {kernels.shape[1]} input channels, input has {expected_in}",
            axis="channels")
    return k


def _check_bias(bias, n, dtype):
    bias = np.asarray(bias, dtype=dtype)
    if bias.shape != (n,):
        raise DimensionError(f"bias: expected shape ({n},), got {bias.shape}", axis="bias")
    return bias


def _check_upstream(gout, expected):
    gout = np.asarray(gout)
    if gout.shape != tuple(expected):
        raise DimensionError(f"upstream gradient shape {gout.shape} != forward output {tuple(expected)}",
                             axis="upstream")
    return gout


# -- convolution ----------------------------------------------------------------

def conv2d_forward(x, kernels, bias, stride=1, padding=0):
    """Standard cross-correlation via im2col and one matrix multiply."""
    x = as_tensor(x)
    kernels = np.asarray(kernels, dtype=x.dtype)
    n, c, h, w = x.shape
    k = _check_kernel(kernels, c)
    c_out = kernels.shape[0]
    bias = _check_bias(bias, c_out, x.dtype)
    oh = output_extent(h, k, stride, padding, "height")
    ow = output_extent(w, k, stride, padding, "width")
    xp = _pad(x, padding)
    cols = backend.kernels.im2col(xp, k, k, stride, oh, ow)
    out = np.matmul(kernels.reshape(c_out, -1), cols)
    out += bias[None, :, None]
    return out.reshape(n, c_out, oh, ow)


def conv2d_backward(x, kernels, bias, stride, padding, upstream):
    x = as_tensor(x)
    kernels = np.asarray(kernels, dtype=x.dtype)
    n, c, h, w = x.shape
    k = _check_kernel(kernels, c)
    c_out = kernels.shape[0]
    oh = output_extent(h, k, stride, padding, "height")
    ow = output_extent(w, k, stride, padding, "width")
    g = _check_upstream(upstream, (n, c_out, oh, ow)).astype(x.dtype, copy=False)
    xp = _pad(x, padding)
    cols = backend.kernels.im2col(xp, k, k, stride, oh, ow)
    g2 = np.ascontiguousarray(g.reshape(n, c_out, oh * ow))
    # one GEMM over the whole batch: (C_out, N*L) @ (N*L, C*k*k)
    g_flat = g2.transpose(1, 0, 2).reshape(c_out, n * oh * ow)
    cols_flat = cols.transpose(0, 2, 1).reshape(n * oh * ow, -1)
    d_kernels = (g_flat @ cols_flat).reshape(kernels.shape)
    d_bias = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(x.dtype)
    d_cols = np.ascontiguousarray(np.matmul(kernels.reshape(c_out, -1).T, g2))
    hp, wp = h + 2 * padding, w + 2 * padding
    d_xp = backend.kernels.col2im(d_cols, c, hp, wp, k, k, stride, oh, ow)
    return LayerGrads(_unpad(d_xp, padding), {"kernels": d_kernels, "bias": d_bias})


def depthwise_conv2d_forward(x, kernels, bias, stride=1, padding=0):
    """One ``k x k`` filter per channel; channel ``c`` of the output sees only channel ``c``."""
    x = as_tensor(x)
    kernels = np.asarray(kernels, dtype=x.dtype)
    n, c, h, w = x.shape
    k = _check_kernel(kernels, c, depthwise=True)
    bias = _check_bias(bias, c, x.dtype)
    oh = output_extent(h, k, stride, padding, "height")
    ow = output_extent(w, k, stride, padding, "width")
    xp = _pad(x, padding)
    out = backend.kernels.dw_forward(xp, np.ascontiguousarray(kernels[:, 0]), stride, oh, ow)
    out += bias[None, :, None, None]
    return out


def depthwise_conv2d_backward(x, kernels, bias, stride, padding, upstream):
    x = as_tensor(x)
    kernels = np.asarray(kernels, dtype=x.dtype)
    n, c, h, w = x.shape
    k = _check_kernel(kernels, c, depthwise=True)
    oh = output_extent(h, k, stride, padding, "height")
    ow = output_extent(w, k, stride, padding, "width")
    g = np.ascontiguousarray(_check_upstream(upstream, (n, c, oh, ow)), dtype=x.dtype)
    w2 = np.ascontiguousarray(kernels[:, 0])
    xp = _pad(x, padding)
    d_xp = backend.kernels.dw_backward_input(g, w2, stride, h + 2 * padding, w + 2 * padding)
    d_k = backend.kernels.dw_backward_weight(g, xp, k, k, stride)
    d_bias = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(x.dtype)
    return LayerGrads(_unpad(d_xp, padding), {"kernels": d_k[:, None], "bias": d_bias})


def pointwise_conv2d_forward(x, kernels, bias):
    """1x1 convolution: a per-pixel linear map across channels."""
    kernels = np.asarray(kernels)
    if kernels.ndim != 4 or kernels.shape[2:] != (1, 1):
        raise ConfigurationError(f"pointwise kernels must be C_out x C_in x 1 x 1, got {kernels.shape}")
    return conv2d_forward(x, kernels, bias, 1, 0)


def pointwise_conv2d_backward(x, kernels, bias, upstream):
    return conv2d_backward(x, kernels, bias, 1, 0, upstream)


def pad2d(x, bottom, right):
    """Zero rows below and zero columns to the right (odd "same" padding)."""
    x = np.asarray(x)
    return np.pad(x, ((0, 0), (0, 0), (0, bottom), (0, right)))


def pad2d_backward(x, bottom, right, upstream):
    x = np.asarray(x)
    n, c, h, w = x.shape
    g = _check_upstream(upstream, (n, c, h + bottom, w + right))
    return LayerGrads(np.ascontiguousarray(g[:, :, :h, :w]))


# -- normalization and activations ------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, epsilon=BN_EPSILON,
                      training=False, momentum=BN_MOMENTUM):
    """Per-channel batch normalization.

    Returns ``(output, running_mean, running_var)``. In training mode the batch
    statistics (biased variance over N, H, W) normalize the input and the
    running statistics are blended in with weight ``momentum``; in inference
    mode the running statistics are used and returned unchanged.
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    if epsilon <= 0:
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    gamma, beta, running_mean, running_var = (
        _check_bias(v, c, x.dtype) for v in (gamma, beta, running_mean, running_var))
    if training:
        if n * h * w < 2:
            raise ConfigurationError(f"batch norm in training mode needs N*H*W >= 2 per channel, got {n * h * w}")
        mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
        var = x.var(axis=(0, 2, 3), dtype=np.float64)
        new_mean = ((1 - momentum) * running_mean + momentum * mean).astype(x.dtype)
        new_var = ((1 - momentum) * running_var + momentum * var).astype(x.dtype)
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean.copy(), running_var.copy()
    # staged in float64 and rounded once: casting the shared statistics to the
    # storage type first would quantize every output of a channel coherently
    inv_std = 1.0 / np.sqrt(np.asarray(var, np.float64) + epsilon)
    scale = np.asarray(gamma, np.float64) * inv_std
    mean = np.asarray(mean, np.float64)
    out = ((x - mean[None, :, None, None]) * scale[None, :, None, None]
           + np.asarray(beta, np.float64)[None, :, None, None])
    return out.astype(x.dtype), new_mean, new_var


def batchnorm_backward(x, gamma, beta, running_mean, running_var, upstream, epsilon=BN_EPSILON,
                       training=True):
    x = as_tensor(x)
    n, c, h, w = x.shape
    g = _check_upstream(upstream, x.shape).astype(np.float64)
    gamma = _check_bias(gamma, c, np.float64)
    axes = (0, 2, 3)
    if training:
        x64 = x.astype(np.float64)
        mean = x64.mean(axis=axes)
        var = x64.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + epsilon)
        xhat = (x64 - mean[None, :, None, None]) * inv_std[None, :, None, None]
        d_beta = g.sum(axis=axes)
        d_gamma = (g * xhat).sum(axis=axes)
        m = n * h * w
        dx = (gamma * inv_std / m)[None, :, None, None] * (
            m * g - d_beta[None, :, None, None] - xhat * d_gamma[None, :, None, None])
    else:
        inv_std = 1.0 / np.sqrt(np.asarray(running_var, np.float64) + epsilon)
        xhat = (x - np.asarray(running_mean, np.float64)[None, :, None, None]) * inv_std[None, :, None, None]
        d_beta = g.sum(axis=axes)
        d_gamma = (g * xhat).sum(axis=axes)
        dx = g * (gamma * inv_std)[None, :, None, None]
    dt = x.dtype
    return LayerGrads(dx.astype(dt), {"gamma": d_gamma.astype(dt), "beta": d_beta.astype(dt)})


def relu(x):
    x = np.asarray(x)
    return np.maximum(x, 0).astype(x.dtype if x.dtype.kind == "f" else np.float32, copy=False)


def relu_backward(x, upstream):
    x = np.asarray(x)
    g = _check_upstream(upstream, x.shape)
    return LayerGrads(np.where(x > 0, g, 0).astype(g.dtype if g.dtype.kind == "f" else np.float32))


# -- pooling ---------------------------------------------------------------------

def _window(window):
    if isinstance(window, int):
        return window, window
    kh, kw = window
    return int(kh), int(kw)


def pool2d(x, mode, window, stride):
    """Max or average pooling. ``window`` is an int or an ``(kh, kw)`` pair."""
    x = as_tensor(x)
    kh, kw = _window(window)
    if kh < 1 or kw < 1:
        raise ConfigurationError(f"pool window must be positive, got {(kh, kw)}")
    oh = output_extent(x.shape[2], kh, stride, 0, "height")
    ow = output_extent(x.shape[3], kw, stride, 0, "width")
    if mode == "max":
        out, _ = backend.kernels.maxpool_forward(x, kh, kw, stride, oh, ow)
        return out
    if mode == "average":
        return backend.kernels.avgpool_forward(x, kh, kw, stride, oh, ow)
    raise ConfigurationError(f"pool mode must be 'max' or 'average', got {mode!r}")


def pool2d_backward(x, mode, window, stride, upstream):
    x = as_tensor(x)
    kh, kw = _window(window)
    n, c, h, w = x.shape
    oh = output_extent(h, kh, stride, 0, "height")
    ow = output_extent(w, kw, stride, 0, "width")
    g = np.ascontiguousarray(_check_upstream(upstream, (n, c, oh, ow)), dtype=x.dtype)
    if mode == "max":
        _, arg = backend.kernels.maxpool_forward(x, kh, kw, stride, oh, ow)
        return LayerGrads(backend.kernels.maxpool_backward(g, arg, kh, kw, stride, h, w))
    if mode == "average":
        return LayerGrads(backend.kernels.avgpool_backward(g, kh, kw, stride, h, w))
    raise ConfigurationError(f"pool mode must be 'max' or 'average', got {mode!r}")


# -- dense head ------------------------------------------------------------------

def fully_connected_forward(x, weights, bias):
    """``y = x @ W.T + b`` for ``x`` of shape ``(N, D)`` and ``W`` of shape ``(M, D)``."""
    x = as_tensor(x, rank=2)
    weights = np.asarray(weights, dtype=x.dtype)
    if weights.ndim != 2 or weights.shape[1] != x.shape[1]:
        raise DimensionError(f"features: weights {weights.shape} do not accept input {x.shape}", axis="features")
    bias = _check_bias(bias, weights.shape[0], x.dtype)
    return x @ weights.T + bias


def fully_connected_backward(x, weights, bias, upstream):
    x = as_tensor(x, rank=2)
    weights = np.asarray(weights, dtype=x.dtype)
    g = _check_upstream(upstream, (x.shape[0], weights.shape[0])).astype(x.dtype, copy=False)
    return LayerGrads(g @ weights, {"weights": g.T @ x,
                                    "bias": g.sum(axis=0, dtype=np.float64).astype(x.dtype)})


def softmax(logits):
    """Softmax over the last axis, shifted by the max logit."""
    z = np.asarray(logits)
    if z.dtype.kind != "f":
        z = z.astype(np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    """Logistic function; a Python float for scalar input."""
    arr = np.asarray(z)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    out = np.exp(-np.logaddexp(0, -arr))
    return float(out) if out.ndim == 0 else out


def softmax_cross_entropy_backward(logits, labels):
    """Fused gradient of mean cross-entropy w.r.t. logits: ``(p - onehot) / N``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    p = softmax(logits)
    p[np.arange(len(labels)), labels] -= 1
    return p / len(labels)


def flatten(x):
    x = np.asarray(x)
    return x.reshape(x.shape[0], -1)


_BACKWARD = {
    "conv": conv2d_backward,
    "depthwise": depthwise_conv2d_backward,
    "pointwise": pointwise_conv2d_backward,
    "batchnorm": batchnorm_backward,
    "relu": relu_backward,
    "pool": pool2d_backward,
    "fc": fully_connected_backward,
    "pad": pad2d_backward,
}


def layer_backward(kind, *forward_args, upstream, **forward_kwargs):
    """Dispatch to the backward function for ``kind``.

    ``forward_args`` are the positional arguments of that layer's forward call.
    ``softmax_ce`` takes ``(logits, labels)`` and has no upstream gradient.
    """
    if kind == "softmax_ce":
        return LayerGrads(softmax_cross_entropy_backward(*forward_args))
    try:
        fn = _BACKWARD[kind]
    except KeyError:
        raise ConfigurationError(f"unknown layer kind {kind!r}") from None
    return fn(*forward_args, upstream=upstream, **forward_kwargs)
