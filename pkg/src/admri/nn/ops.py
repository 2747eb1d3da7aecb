"""Per-sample layer math: convolution, pooling, dense layers, ReLU, softmax loss.

Tensors are plain numpy arrays in float32 (training) or float64 (gradient
checking); both precisions are supported by every operation. Convolutions
are valid (no padding), stride 1. Conv and pool inner loops dispatch to the
selected kernel backend; dense layers go straight to BLAS.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import backend

_FLOAT_DTYPES = (np.float32, np.float64)


def _as_tensor(a, name: str, ndim: int):
    a = np.asarray(a)
    if a.dtype not in _FLOAT_DTYPES:
        raise ValueError(f"{name} must be float32 or float64, got {a.dtype}")
    if a.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimensions, got shape {a.shape}")
    return np.ascontiguousarray(a)


@dataclass(frozen=True)
class ConvKernel:
    """Convolution filter bank: weights [F, C, m, m] and bias [F]."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = _as_tensor(self.weights, "weights", 4)
        b = _as_tensor(self.bias, "bias", 1)
        if w.shape[2] != w.shape[3] or w.shape[2] < 1:
            raise ValueError(f"kernel must be square and non-empty, got {w.shape}")
        if min(w.shape[0], w.shape[1]) < 1:
            raise ValueError(f"kernel needs F >= 1 and C >= 1, got {w.shape}")
        if b.shape[0] != w.shape[0]:
            raise ValueError(f"bias length {b.shape[0]} != filter count {w.shape[0]}")
        if b.dtype != w.dtype:
            raise ValueError("weights and bias must share a dtype")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def filters(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def size(self) -> int:
        return self.weights.shape[2]


class LossGrad(NamedTuple):
    """Scalar loss and its gradient w.r.t. the logits."""

    loss: float
    grad_logits: np.ndarray


def conv2d_forward(x, kernel: ConvKernel, stride: int = 1):
    """Valid convolution of x [C, H, W] with the kernel; returns [F, H-m+1, W-m+1]."""
    if stride != 1:
        raise ValueError(f"only stride 1 is supported, got {stride}")
    x = _as_tensor(x, "input", 3)
    if x.dtype != kernel.weights.dtype:
        raise ValueError(f"input dtype {x.dtype} != kernel dtype {kernel.weights.dtype}")
    if x.shape[0] != kernel.in_channels:
        raise ValueError(
            f"input has {x.shape[0]} channels but kernel expects {kernel.in_channels}"
        )
    if x.shape[1] < kernel.size or x.shape[2] < kernel.size:
        raise ValueError(f"input {x.shape[1:]} smaller than kernel {kernel.size}")
    return backend.conv2d_forward(x, kernel.weights, kernel.bias)


def conv2d_backward(x, kernel: ConvKernel, grad_out):
    """Gradients of conv2d_forward w.r.t. (input, weights, bias)."""
    x = _as_tensor(x, "input", 3)
    g = _as_tensor(grad_out, "grad_out", 3)
    m = kernel.size
    expected = (kernel.filters, x.shape[1] - m + 1, x.shape[2] - m + 1)
    if x.shape[0] != kernel.in_channels:
        raise ValueError(
            f"input has {x.shape[0]} channels but kernel expects {kernel.in_channels}"
        )
    if g.shape != expected:
        raise ValueError(f"grad_out shape {g.shape} != forward output shape {expected}")
    if x.dtype != kernel.weights.dtype or g.dtype != x.dtype:
        raise ValueError("input, kernel, and grad_out dtypes must match")
    return backend.conv2d_backward(x, kernel.weights, g)


def maxpool2x2_forward(x):
    """Disjoint 2x2 max pool of x [C, H, W]; returns (output, argmax_map).

    The argmax map stores the winning in-window offset (0..3, row-major,
    first occurrence on ties) and is consumed by maxpool2x2_backward.
    """
    x = _as_tensor(x, "input", 3)
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ValueError(f"pooling needs even H and W, got {x.shape}")
    return backend.maxpool2x2_forward(x)


def maxpool2x2_backward(argmax_map, grad_out):
    """Route grad_out [C, Ho, Wo] back to the argmax positions, zero elsewhere."""
    g = _as_tensor(grad_out, "grad_out", 3)
    arg = np.asarray(argmax_map)
    if arg.dtype != np.uint8 or arg.ndim != 3:
        raise ValueError("argmax_map must be a uint8 [C, Ho, Wo] array")
    if arg.shape != g.shape:
        raise ValueError(f"argmax_map shape {arg.shape} != grad_out shape {g.shape}")
    return backend.maxpool2x2_backward(np.ascontiguousarray(arg), g)


def fc_forward(x, weights, bias):
    """Dense layer: weights [N_out, N_in] @ x [N_in] + bias [N_out]."""
    x = _as_tensor(x, "input", 1)
    w = _as_tensor(weights, "weights", 2)
    b = _as_tensor(bias, "bias", 1)
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"weights expect {w.shape[1]} inputs, got {x.shape[0]}")
    if b.shape[0] != w.shape[0]:
        raise ValueError(f"bias length {b.shape[0]} != output width {w.shape[0]}")
    return w @ x + b


def fc_backward(x, weights, grad_out):
    """Gradients of fc_forward: (weights.T @ g, outer(g, x), g)."""
    x = _as_tensor(x, "input", 1)
    w = _as_tensor(weights, "weights", 2)
    g = _as_tensor(grad_out, "grad_out", 1)
    if w.shape[1] != x.shape[0] or w.shape[0] != g.shape[0]:
        raise ValueError(
            f"inconsistent shapes: weights {w.shape}, input {x.shape}, grad {g.shape}"
        )
    return w.T @ g, np.outer(g, x), g.copy()


def relu(x):
    """Elementwise max(0, x)."""
    x = np.asarray(x)
    return np.maximum(x, x.dtype.type(0))


def relu_backward(x, grad_out):
    """Pass grad where the forward input was > 0, zero elsewhere (including at 0)."""
    x = np.asarray(x)
    g = np.asarray(grad_out)
    if x.shape != g.shape:
        raise ValueError(f"input shape {x.shape} != grad shape {g.shape}")
    return np.where(x > 0, g, g.dtype.type(0))


def softmax(logits):
    """Stable softmax of a 1-D logit vector."""
    z = np.asarray(logits)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_cross_entropy(logits, true_class: int) -> LossGrad:
    """Softmax + negative log-likelihood for one sample.

    Computed with max subtraction; loss = -ln p[true_class] and
    grad_logits = p - onehot(true_class).
    """
    z = _as_tensor(logits, "logits", 1)
    k = z.shape[0]
    if k < 2:
        raise ValueError(f"need at least 2 classes, got {k}")
    if not 0 <= int(true_class) < k:
        raise ValueError(f"true_class {true_class} out of range for {k} classes")
    shifted = z - z.max()
    e = np.exp(shifted)
    total = e.sum()
    p = e / total
    # -ln p[t] = ln(sum e) - shifted[t]; never negative because shifted <= 0
    loss = float(np.log(total) - shifted[int(true_class)])
    grad = p.copy()
    grad[int(true_class)] -= 1
    return LossGrad(loss, grad.astype(z.dtype, copy=False))
