"""Independent reference implementations used by the test-suite."""

import numpy as np


def conv2d_nested(x, kernels, bias, stride, padding):
    """Direct seven-loop cross-correlation in float64."""
    x = np.asarray(x, np.float64)
    kernels = np.asarray(kernels, np.float64)
    n, c, h, w = x.shape
    c_out, c_in, k, _ = kernels.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + w] = x
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, oh, ow))
    for b in range(n):
        for o in range(c_out):
            for y in range(oh):
                for z in range(ow):
                    acc = bias[o]
                    for ci in range(c_in):
                        for i in range(k):
                            for j in range(k):
                                acc += xp[b, ci, y * stride + i, z * stride + j] * kernels[o, ci, i, j]
                    out[b, o, y, z] = acc
    return out


def depthwise_nested(x, kernels, bias, stride, padding):
    """Per-channel nested-loop oracle: each channel convolved on its own."""
    x = np.asarray(x, np.float64)
    outs = [conv2d_nested(x[:, c:c + 1], kernels[c:c + 1], bias[c:c + 1], stride, padding)
            for c in range(x.shape[1])]
    return np.concatenate(outs, axis=1)


def central_difference(f, arrays, h=1e-3):
    """Central finite differences of scalar ``f()`` w.r.t. every element of ``arrays``.

    The arrays are perturbed in place and restored.
    """
    grads = []
    for a in arrays:
        g = np.zeros(a.shape, np.float64)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = f()
            flat[idx] = orig - h
            fm = f()
            flat[idx] = orig
            gflat[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_error(analytic, numeric):
    a = np.asarray(analytic, np.float64).ravel()
    n = np.asarray(numeric, np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)
