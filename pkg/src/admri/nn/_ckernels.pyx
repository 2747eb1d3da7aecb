# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution and pooling kernels.

These are the hot loops of training; everything else in the package is
plain numpy. Semantics mirror ``admri.nn.kernels_numpy`` (same shapes, same
argmax tie-breaking); only the floating-point summation order differs.

Inputs must be C-contiguous float32 or float64 arrays; the wrappers in
``admri.nn.ops`` take care of that.
"""

import numpy as np

ctypedef fused real_t:
    float
    double


cdef inline object _empty(tuple shape, bint single):
    if single:
        return np.empty(shape, dtype=np.float32)
    return np.empty(shape, dtype=np.float64)


cdef inline object _zeros(tuple shape, bint single):
    if single:
        return np.zeros(shape, dtype=np.float32)
    return np.zeros(shape, dtype=np.float64)


def conv2d_forward(real_t[:, :, ::1] x, real_t[:, :, :, ::1] w, real_t[::1] b):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t F = w.shape[0], m = w.shape[2]
    cdef Py_ssize_t ho = H - m + 1, wo = W - m + 1
    out_arr = _empty((F, ho, wo), real_t is float)
    cdef real_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t f, c, a, t, i, j
    cdef real_t wv, bv
    for f in range(F):
        bv = b[f]
        for i in range(ho):
            for j in range(wo):
                out[f, i, j] = bv
        for c in range(C):
            for a in range(m):
                for t in range(m):
                    wv = w[f, c, a, t]
                    for i in range(ho):
                        for j in range(wo):
                            out[f, i, j] += wv * x[c, i + a, j + t]
    return out_arr


def conv2d_backward(real_t[:, :, ::1] x, real_t[:, :, :, ::1] w,
                    real_t[:, :, ::1] gout):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t F = w.shape[0], m = w.shape[2]
    cdef Py_ssize_t ho = gout.shape[1], wo = gout.shape[2]
    gx_arr = _zeros((C, H, W), real_t is float)
    gw_arr = _empty((F, C, m, m), real_t is float)
    gb_arr = _zeros((F,), real_t is float)
    cdef real_t[:, :, ::1] gx = gx_arr
    cdef real_t[:, :, :, ::1] gw = gw_arr
    cdef real_t[::1] gb = gb_arr
    cdef Py_ssize_t f, c, a, t, i, j
    cdef real_t acc, wv, g
    for f in range(F):
        acc = 0
        for i in range(ho):
            for j in range(wo):
                acc += gout[f, i, j]
        gb[f] = acc
    for f in range(F):
        for c in range(C):
            for a in range(m):
                for t in range(m):
                    wv = w[f, c, a, t]
                    acc = 0
                    for i in range(ho):
                        for j in range(wo):
                            g = gout[f, i, j]
                            acc += g * x[c, i + a, j + t]
                            gx[c, i + a, j + t] += wv * g
                    gw[f, c, a, t] = acc
    return gx_arr, gw_arr, gb_arr


def maxpool2x2_forward(real_t[:, :, ::1] x):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t ho = H // 2, wo = W // 2
    out_arr = _empty((C, ho, wo), real_t is float)
    arg_arr = np.empty((C, ho, wo), dtype=np.uint8)
    cdef real_t[:, :, ::1] out = out_arr
    cdef unsigned char[:, :, ::1] arg = arg_arr
    cdef Py_ssize_t c, i, j, bi, bj
    cdef real_t best, v
    cdef unsigned char off
    for c in range(C):
        for i in range(ho):
            bi = 2 * i
            for j in range(wo):
                bj = 2 * j
                best = x[c, bi, bj]
                off = 0
                v = x[c, bi, bj + 1]
                if v > best:
                    best = v
                    off = 1
                v = x[c, bi + 1, bj]
                if v > best:
                    best = v
                    off = 2
                v = x[c, bi + 1, bj + 1]
                if v > best:
                    best = v
                    off = 3
                out[c, i, j] = best
                arg[c, i, j] = off
    return out_arr, arg_arr


def maxpool2x2_backward(unsigned char[:, :, ::1] arg, real_t[:, :, ::1] gout):
    cdef Py_ssize_t C = gout.shape[0], ho = gout.shape[1], wo = gout.shape[2]
    gx_arr = _zeros((C, 2 * ho, 2 * wo), real_t is float)
    cdef real_t[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t c, i, j
    cdef unsigned char off
    for c in range(C):
        for i in range(ho):
            for j in range(wo):
                off = arg[c, i, j]
                gx[c, 2 * i + (off >> 1), 2 * j + (off & 1)] += gout[c, i, j]
    return gx_arr
