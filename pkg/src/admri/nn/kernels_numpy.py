"""Vectorized numpy fallback for the convolution and pooling kernels.

Selected by ``admri.nn.backend`` when the compiled extension is unavailable
or when ``ADMRI_KERNELS=numpy`` is set. Results agree with the compiled
kernels up to floating-point summation order; argmax maps are identical.

All functions operate on a single sample: inputs are [C, H, W], kernels are
[F, C, m, m]. Purely valid (no padding) stride-1 convolutions.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b):
    """out[f,i,j] = b[f] + sum_{c,a,t} x[c,i+a,j+t] * w[f,c,a,t]."""
    m = w.shape[2]
    windows = sliding_window_view(x, (m, m), axis=(1, 2))  # [C,Ho,Wo,m,m]
    out = np.tensordot(w, windows, axes=([1, 2, 3], [0, 3, 4]))
    out += b[:, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x, w, gout):
    """Gradients of the valid convolution w.r.t. input, weights, and bias.

    grad_input is the full correlation of the upstream gradient with the
    kernel: gx[c,i,j] = sum_{f,a,t} gout[f,i-a,j-t] * w[f,c,a,t], with
    out-of-range gout terms treated as zero.
    """
    m = w.shape[2]
    windows = sliding_window_view(x, (m, m), axis=(1, 2))
    gw = np.tensordot(gout, windows, axes=([1, 2], [1, 2]))  # [F,C,m,m]
    gb = gout.sum(axis=(1, 2))
    padded = np.pad(gout, ((0, 0), (m - 1, m - 1), (m - 1, m - 1)))
    gwin = sliding_window_view(padded, (m, m), axis=(1, 2))  # [F,H,W,m,m]
    flipped = w[:, :, ::-1, ::-1]
    gx = np.tensordot(gwin, flipped, axes=([0, 3, 4], [0, 2, 3]))  # [H,W,C]
    return (
        np.ascontiguousarray(gx.transpose(2, 0, 1)),
        np.ascontiguousarray(gw),
        np.ascontiguousarray(gb),
    )


def maxpool2x2_forward(x):
    """Disjoint 2x2 max pooling; argmax offsets 0..3 in row-major window order."""
    c, h, w = x.shape
    win = (
        x.reshape(c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h // 2, w // 2, 4)
    )
    arg = win.argmax(axis=3)  # numpy argmax keeps the first max: row-major ties
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.uint8)


def maxpool2x2_backward(arg, gout):
    """Route each upstream gradient to the recorded argmax position."""
    c, ho, wo = gout.shape
    gwin = np.zeros((c, ho, wo, 4), dtype=gout.dtype)
    np.put_along_axis(gwin, arg[..., None].astype(np.intp), gout[..., None], axis=3)
    gx = gwin.reshape(c, ho, wo, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * ho, 2 * wo)
    return np.ascontiguousarray(gx)
