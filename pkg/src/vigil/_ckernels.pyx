# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Same signatures and accumulation order as ``_pykernels``."""

import numpy as np

NAME = "compiled"

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
           Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t b, ch, i, j, y, x, row
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c * kh * kw, oh * ow), dtype=dtype)
    cdef real[:, :, ::1] cols = out
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for y in range(oh):
                            for x in range(ow):
                                cols[b, row, y * ow + x] = xp[b, ch, y * stride + i, x * stride + j]
    return out


def col2im(real[:, :, ::1] cols, Py_ssize_t c, Py_ssize_t hp, Py_ssize_t wp,
           Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t b, ch, i, j, y, x, row
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] g = out
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    for ch in range(c):
                        row = (ch * kh + i) * kw + j
                        for y in range(oh):
                            for x in range(ow):
                                g[b, ch, y * stride + i, x * stride + j] += cols[b, row, y * ow + x]
    return out


def dw_forward(real[:, :, :, ::1] xp, real[:, :, ::1] w, Py_ssize_t stride,
               Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t b, ch, i, j, y, x
    cdef real acc
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c, oh, ow), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for x in range(ow):
                        acc = 0
                        for i in range(kh):
                            for j in range(kw):
                                acc = acc + xp[b, ch, y * stride + i, x * stride + j] * w[ch, i, j]
                        o[b, ch, y, x] = acc
    return out


def dw_backward_input(real[:, :, :, ::1] gout, real[:, :, ::1] w, Py_ssize_t stride,
                      Py_ssize_t hp, Py_ssize_t wp):
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1], oh = gout.shape[2], ow = gout.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t b, ch, i, j, y, x
    cdef real wv
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] g = out
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    for ch in range(c):
                        wv = w[ch, i, j]
                        for y in range(oh):
                            for x in range(ow):
                                g[b, ch, y * stride + i, x * stride + j] += gout[b, ch, y, x] * wv
    return out


def dw_backward_weight(real[:, :, :, ::1] gout, real[:, :, :, ::1] xp, Py_ssize_t kh,
                       Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1], oh = gout.shape[2], ow = gout.shape[3]
    cdef Py_ssize_t b, ch, i, j, y, x
    cdef double acc
    dtype = np.float32 if real is float else np.float64
    out = np.empty((c, kh, kw), dtype=dtype)
    cdef real[:, :, ::1] gw = out
    with nogil:
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    acc = 0.0
                    for b in range(n):
                        for y in range(oh):
                            for x in range(ow):
                                acc += <double>gout[b, ch, y, x] * <double>xp[b, ch, y * stride + i, x * stride + j]
                    gw[ch, i, j] = <real>acc
    return out


def maxpool_forward(real[:, :, :, ::1] xin, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                    Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t n = xin.shape[0], c = xin.shape[1]
    cdef Py_ssize_t b, ch, i, j, y, x
    cdef real best, v
    cdef int arg
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c, oh, ow), dtype=dtype)
    args = np.empty((n, c, oh, ow), dtype=np.int32)
    cdef real[:, :, :, ::1] o = out
    cdef int[:, :, :, ::1] a = args
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for x in range(ow):
                        best = xin[b, ch, y * stride, x * stride]
                        arg = 0
                        for i in range(kh):
                            for j in range(kw):
                                v = xin[b, ch, y * stride + i, x * stride + j]
                                if v > best:
                                    best = v
                                    arg = <int>(i * kw + j)
                        o[b, ch, y, x] = best
                        a[b, ch, y, x] = arg
    return out, args


def maxpool_backward(real[:, :, :, ::1] gout, int[:, :, :, ::1] args, Py_ssize_t kh,
                     Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1], oh = gout.shape[2], ow = gout.shape[3]
    cdef Py_ssize_t b, ch, i, j, y, x
    cdef int q
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] g = out
    with nogil:
        for i in range(kh):
            for j in range(kw):
                q = <int>(i * kw + j)
                for b in range(n):
                    for ch in range(c):
                        for y in range(oh):
                            for x in range(ow):
                                if args[b, ch, y, x] == q:
                                    g[b, ch, y * stride + i, x * stride + j] += gout[b, ch, y, x]
    return out


def avgpool_forward(real[:, :, :, ::1] xin, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                    Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t n = xin.shape[0], c = xin.shape[1]
    cdef Py_ssize_t b, ch, i, j, y, x
    cdef real acc
    cdef real area = <real>(kh * kw)
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c, oh, ow), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for x in range(ow):
                        acc = 0
                        for i in range(kh):
                            for j in range(kw):
                                acc = acc + xin[b, ch, y * stride + i, x * stride + j]
                        o[b, ch, y, x] = acc / area
    return out


def avgpool_backward(real[:, :, :, ::1] gout, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                     Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1], oh = gout.shape[2], ow = gout.shape[3]
    cdef Py_ssize_t b, ch, i, j, y, x
    cdef real area = <real>(kh * kw)
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] g = out
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    for ch in range(c):
                        for y in range(oh):
                            for x in range(ow):
                                g[b, ch, y * stride + i, x * stride + j] += gout[b, ch, y, x] / area
    return out
