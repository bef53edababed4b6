"""Pure-numpy kernels. Always importable; used when the compiled module is absent.

Every function mirrors one in ``_ckernels.pyx`` with the same signature. Inputs
are already padded and validated by :mod:`vigil.tensor`. Scatter-style loops
visit kernel offsets ``(i, j)`` in row-major order as the outer loop so both
backends add contributions to a given pixel in the same sequence.
"""

import numpy as np

NAME = "python"


def _window(x, i, j, stride, oh, ow):
    return x[:, :, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride]


def im2col(xp, kh, kw, stride, oh, ow):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = _window(xp, i, j, stride, oh, ow)
    return cols.reshape(n, c * kh * kw, oh * ow)


def col2im(cols, c, hp, wp, kh, kw, stride, oh, ow):
    n = cols.shape[0]
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            _window(out, i, j, stride, oh, ow)[...] += cols[:, :, i, j]
    return out


def dw_forward(xp, w, stride, oh, ow):
    kh, kw = w.shape[1:]
    acc = np.zeros((xp.shape[0], xp.shape[1], oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            acc += _window(xp, i, j, stride, oh, ow) * w[None, :, i, j, None, None]
    return acc


def dw_backward_input(gout, w, stride, hp, wp):
    n, c, oh, ow = gout.shape
    kh, kw = w.shape[1:]
    gxp = np.zeros((n, c, hp, wp), dtype=gout.dtype)
    for i in range(kh):
        for j in range(kw):
            _window(gxp, i, j, stride, oh, ow)[...] += gout * w[None, :, i, j, None, None]
    return gxp


def dw_backward_weight(gout, xp, kh, kw, stride):
    n, c, oh, ow = gout.shape
    g64 = gout.astype(np.float64)
    gw = np.empty((c, kh, kw), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            win = _window(xp, i, j, stride, oh, ow).astype(np.float64)
            gw[:, i, j] = (g64 * win).sum(axis=(0, 2, 3))
    return gw.astype(gout.dtype)


def maxpool_forward(x, kh, kw, stride, oh, ow):
    n, c = x.shape[:2]
    best = _window(x, 0, 0, stride, oh, ow).copy()
    arg = np.zeros((n, c, oh, ow), dtype=np.int32)
    for i in range(kh):
        for j in range(kw):
            if i == 0 and j == 0:
                continue
            win = _window(x, i, j, stride, oh, ow)
            better = win > best
            best = np.where(better, win, best)
            arg[better] = i * kw + j
    return best, arg


def maxpool_backward(gout, arg, kh, kw, stride, h, w):
    n, c, oh, ow = gout.shape
    gx = np.zeros((n, c, h, w), dtype=gout.dtype)
    for i in range(kh):
        for j in range(kw):
            hit = arg == i * kw + j
            _window(gx, i, j, stride, oh, ow)[...] += np.where(hit, gout, 0)
    return gx


def avgpool_forward(x, kh, kw, stride, oh, ow):
    acc = np.zeros((x.shape[0], x.shape[1], oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            acc += _window(x, i, j, stride, oh, ow)
    return acc / x.dtype.type(kh * kw)


def avgpool_backward(gout, kh, kw, stride, h, w):
    n, c, oh, ow = gout.shape
    g = gout / gout.dtype.type(kh * kw)
    gx = np.zeros((n, c, h, w), dtype=gout.dtype)
    for i in range(kh):
        for j in range(kw):
            _window(gx, i, j, stride, oh, ow)[...] += g
    return gx
