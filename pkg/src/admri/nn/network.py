"""The adopted small CNN: two conv+pool stages, two dense layers, softmax output.

Per-sample shape chain for the default spec (28x28 single-channel input):
1x28x28 -> 20x24x24 -> 20x12x12 -> 50x8x8 -> 50x4x4 -> 800 -> 500 -> 2.
ReLU follows each convolution and the first dense layer.

The batch dimension lives here; the per-sample layer math is in
``admri.nn.ops``. Checkpoints are little-endian with a 4-byte magic, a
format version, and an architecture fingerprint so stale files are refused.
"""

import math
import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..errors import FingerprintError, FormatError, TruncationError, VersionError
from ..hashing import fnv1a64
from . import ops
from .ops import ConvKernel

CHECKPOINT_MAGIC = b"LNT5"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """Architecture description; immutable and hashable into a fingerprint."""

    input_shape: tuple = (1, 28, 28)
    conv1_filters: int = 20
    conv2_filters: int = 50
    kernel_size: int = 5
    hidden_units: int = 500
    num_classes: int = 2

    def __post_init__(self):
        c, h, w = self.input_shape
        if min(c, h, w) < 1:
            raise ValueError(f"bad input shape {self.input_shape}")
        for name in ("conv1_filters", "conv2_filters", "kernel_size", "hidden_units"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        self.shape_chain()  # raises if the layers do not compose

    def shape_chain(self) -> list:
        """Intermediate shapes after each layer of the forward pass."""
        c, h, w = self.input_shape
        k = self.kernel_size
        chain = []
        h1, w1 = h - k + 1, w - k + 1
        if h1 < 1 or w1 < 1:
            raise ValueError(f"kernel {k} too large for input {h}x{w}")
        chain.append((self.conv1_filters, h1, w1))
        if h1 % 2 or w1 % 2:
            raise ValueError(f"conv1 output {h1}x{w1} is not poolable")
        h1, w1 = h1 // 2, w1 // 2
        chain.append((self.conv1_filters, h1, w1))
        h2, w2 = h1 - k + 1, w1 - k + 1
        if h2 < 1 or w2 < 1:
            raise ValueError(f"kernel {k} too large after first pool ({h1}x{w1})")
        chain.append((self.conv2_filters, h2, w2))
        if h2 % 2 or w2 % 2:
            raise ValueError(f"conv2 output {h2}x{w2} is not poolable")
        h2, w2 = h2 // 2, w2 // 2
        chain.append((self.conv2_filters, h2, w2))
        chain.append((self.conv2_filters * h2 * w2,))
        chain.append((self.hidden_units,))
        chain.append((self.num_classes,))
        return chain

    @property
    def flat_units(self) -> int:
        return self.shape_chain()[4][0]

    def canonical_string(self) -> str:
        c, h, w = self.input_shape
        return (
            f"in={c}x{h}x{w};conv1={self.conv1_filters};conv2={self.conv2_filters};"
            f"k={self.kernel_size};fc1={self.hidden_units};fc2={self.num_classes};"
            f"act=relu;pool=max2x2"
        )

    def fingerprint(self) -> int:
        return fnv1a64(self.canonical_string().encode("ascii"))


@dataclass(frozen=True)
class NetworkParams:
    """All trainable tensors plus the spec they instantiate and the creation seed."""

    spec: LayerSpec
    seed: Optional[int]
    conv1: ConvKernel
    conv2: ConvKernel
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    def tensors(self) -> list:
        """Named tensors in the fixed serialization / update order."""
        return [
            ("conv1.weights", self.conv1.weights),
            ("conv1.bias", self.conv1.bias),
            ("conv2.weights", self.conv2.weights),
            ("conv2.bias", self.conv2.bias),
            ("fc1.weights", self.fc1_w),
            ("fc1.bias", self.fc1_b),
            ("fc2.weights", self.fc2_w),
            ("fc2.bias", self.fc2_b),
        ]

    @property
    def dtype(self):
        return self.fc1_w.dtype

    def with_tensors(self, tensors: dict) -> "NetworkParams":
        """New params with tensors replaced from a name -> array mapping."""
        return replace(
            self,
            conv1=ConvKernel(tensors["conv1.weights"], tensors["conv1.bias"]),
            conv2=ConvKernel(tensors["conv2.weights"], tensors["conv2.bias"]),
            fc1_w=tensors["fc1.weights"],
            fc1_b=tensors["fc1.bias"],
            fc2_w=tensors["fc2.weights"],
            fc2_b=tensors["fc2.bias"],
        )


@dataclass
class ActivationCache:
    """Everything the backward pass needs from one forward pass."""

    batch: np.ndarray
    conv1_out: list
    pool1_out: list
    pool1_arg: list
    conv2_out: list
    pool2_out: list
    pool2_arg: list
    fc1_in: list
    fc1_out: list
    logits: np.ndarray


def _xavier_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(spec: LayerSpec, seed: int, dtype=np.float32) -> NetworkParams:
    """Xavier-uniform weights, zero biases, fully determined by the seed."""
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"dtype must be float32 or float64, got {dtype}")
    rng = np.random.default_rng(seed)
    c = spec.input_shape[0]
    k = spec.kernel_size
    f1, f2 = spec.conv1_filters, spec.conv2_filters

    def uniform(shape, fan_in, fan_out):
        lim = _xavier_limit(fan_in, fan_out)
        return rng.uniform(-lim, lim, size=shape).astype(dtype)

    w1 = uniform((f1, c, k, k), c * k * k, f1 * k * k)
    w2 = uniform((f2, f1, k, k), f1 * k * k, f2 * k * k)
    fc1_w = uniform((spec.hidden_units, spec.flat_units), spec.flat_units, spec.hidden_units)
    fc2_w = uniform((spec.num_classes, spec.hidden_units), spec.hidden_units, spec.num_classes)
    return NetworkParams(
        spec=spec,
        seed=seed,
        conv1=ConvKernel(w1, np.zeros(f1, dtype=dtype)),
        conv2=ConvKernel(w2, np.zeros(f2, dtype=dtype)),
        fc1_w=fc1_w,
        fc1_b=np.zeros(spec.hidden_units, dtype=dtype),
        fc2_w=fc2_w,
        fc2_b=np.zeros(spec.num_classes, dtype=dtype),
    )


def _check_batch(spec: LayerSpec, batch, dtype):
    batch = np.asarray(batch, dtype=dtype)
    if batch.ndim != 4 or batch.shape[1:] != spec.input_shape:
        raise ValueError(
            f"batch must be [B, {spec.input_shape[0]}, {spec.input_shape[1]}, "
            f"{spec.input_shape[2]}], got {batch.shape}"
        )
    return batch


def _forward_sample(params: NetworkParams, x):
    chain = params.spec.shape_chain()
    z1 = ops.conv2d_forward(x, params.conv1)
    assert z1.shape == chain[0]
    a1 = ops.relu(z1)
    p1, m1 = ops.maxpool2x2_forward(a1)
    assert p1.shape == chain[1]
    z2 = ops.conv2d_forward(p1, params.conv2)
    assert z2.shape == chain[2]
    a2 = ops.relu(z2)
    p2, m2 = ops.maxpool2x2_forward(a2)
    assert p2.shape == chain[3]
    flat = p2.reshape(-1)
    h = ops.fc_forward(flat, params.fc1_w, params.fc1_b)
    hr = ops.relu(h)
    logits = ops.fc_forward(hr, params.fc2_w, params.fc2_b)
    assert logits.shape == chain[6]
    return z1, p1, m1, z2, p2, m2, flat, h, logits


def forward(params: NetworkParams, batch):
    """Forward pass over a batch; returns (logits [B, K], ActivationCache)."""
    batch = _check_batch(params.spec, batch, params.dtype)
    b = batch.shape[0]
    cache = ActivationCache(batch, [], [], [], [], [], [], [], [],
                            np.empty((b, params.spec.num_classes), dtype=params.dtype))
    for i in range(b):
        z1, p1, m1, z2, p2, m2, flat, h, logits = _forward_sample(params, batch[i])
        cache.conv1_out.append(z1)
        cache.pool1_out.append(p1)
        cache.pool1_arg.append(m1)
        cache.conv2_out.append(z2)
        cache.pool2_out.append(p2)
        cache.pool2_arg.append(m2)
        cache.fc1_in.append(flat)
        cache.fc1_out.append(h)
        cache.logits[i] = logits
    return cache.logits.copy(), cache


def forward_logits(params: NetworkParams, batch):
    """Forward pass without retaining activations (inference path)."""
    batch = _check_batch(params.spec, batch, params.dtype)
    out = np.empty((batch.shape[0], params.spec.num_classes), dtype=params.dtype)
    for i in range(batch.shape[0]):
        out[i] = _forward_sample(params, batch[i])[-1]
    return out


def backward(params: NetworkParams, cache: ActivationCache, labels):
    """Batch-mean gradients and mean cross-entropy loss.

    The cache must come from an immediately preceding forward on the same
    batch. Gradients are accumulated in sample order (fixed reduction order).
    """
    labels = np.asarray(labels)
    b = cache.batch.shape[0]
    if labels.shape != (b,):
        raise ValueError(f"labels must have shape ({b},), got {labels.shape}")
    k = params.spec.num_classes
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels out of range for {k} classes")

    sums = {name: np.zeros_like(t) for name, t in params.tensors()}
    loss_total = 0.0
    for i in range(b):
        lg = ops.softmax_cross_entropy(cache.logits[i], int(labels[i]))
        loss_total += lg.loss
        g_hr, g_w2, g_b2 = ops.fc_backward(
            ops.relu(cache.fc1_out[i]), params.fc2_w, lg.grad_logits
        )
        g_h = ops.relu_backward(cache.fc1_out[i], g_hr)
        g_flat, g_w1, g_b1 = ops.fc_backward(cache.fc1_in[i], params.fc1_w, g_h)
        g_p2 = g_flat.reshape(cache.pool2_out[i].shape)
        g_a2 = ops.maxpool2x2_backward(cache.pool2_arg[i], g_p2)
        g_z2 = ops.relu_backward(cache.conv2_out[i], g_a2)
        g_p1, g_cw2, g_cb2 = ops.conv2d_backward(cache.pool1_out[i], params.conv2, g_z2)
        g_a1 = ops.maxpool2x2_backward(cache.pool1_arg[i], g_p1)
        g_z1 = ops.relu_backward(cache.conv1_out[i], g_a1)
        _, g_cw1, g_cb1 = ops.conv2d_backward(cache.batch[i], params.conv1, g_z1)

        sums["conv1.weights"] += g_cw1
        sums["conv1.bias"] += g_cb1
        sums["conv2.weights"] += g_cw2
        sums["conv2.bias"] += g_cb2
        sums["fc1.weights"] += g_w1
        sums["fc1.bias"] += g_b1
        sums["fc2.weights"] += g_w2
        sums["fc2.bias"] += g_b2

    inv = params.dtype.type(1.0 / b)
    grads = {name: t * inv for name, t in sums.items()}
    return grads, loss_total / b


def predict(params: NetworkParams, batch):
    """Class labels (argmax, ties to the lower index) and softmax probabilities."""
    logits = forward_logits(params, batch)
    probs = np.empty_like(logits)
    for i in range(logits.shape[0]):
        probs[i] = ops.softmax(logits[i])
    return logits.argmax(axis=1), probs


def save_checkpoint(params: NetworkParams, path) -> None:
    """Write params little-endian: magic, version, fingerprint, then tensors."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<H", CHECKPOINT_VERSION)
    blob += struct.pack("<Q", params.spec.fingerprint())
    for _, tensor in params.tensors():
        blob += struct.pack("<B", tensor.ndim)
        blob += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        blob += np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def _derive_spec(shapes: list) -> LayerSpec:
    """Reconstruct the (square-input) LayerSpec implied by checkpoint tensor shapes."""
    expected_ranks = [4, 1, 4, 1, 2, 1, 2, 1]
    if [len(s) for s in shapes] != expected_ranks:
        raise FormatError(f"unexpected tensor ranks in checkpoint: {shapes}")
    f1, c, k, k2 = shapes[0]
    f2 = shapes[2][0]
    hidden, flat = shapes[4]
    classes = shapes[6][0]
    if k != k2 or shapes[2][1] != f1 or shapes[2][2] != k:
        raise FormatError(f"inconsistent kernel shapes in checkpoint: {shapes}")
    side2 = math.isqrt(flat // f2) if f2 and flat % f2 == 0 else 0
    if side2 * side2 * f2 != flat:
        raise FormatError(f"dense input width {flat} does not match {f2} channels")
    side = 2 * (2 * side2 + k - 1) + k - 1
    return LayerSpec(
        input_shape=(c, side, side),
        conv1_filters=f1,
        conv2_filters=f2,
        kernel_size=k,
        hidden_units=hidden,
        num_classes=classes,
    )


def load_checkpoint(path, spec: Optional[LayerSpec] = None) -> NetworkParams:
    """Read a checkpoint; validates magic, version, and architecture fingerprint.

    When ``spec`` is given the file must match it; otherwise the architecture
    is reconstructed from the stored tensor shapes and the fingerprint must
    agree with the reconstruction.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise TruncationError(f"checkpoint ends early at byte {len(data)}")
        out = data[off : off + n]
        off += n
        return out

    if take(4) != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<H", take(2))
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    (stored_fp,) = struct.unpack("<Q", take(8))

    tensors = []
    for _ in range(8):
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        tensors.append(arr.astype(np.float32))
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes after checkpoint payload")

    derived = _derive_spec([t.shape for t in tensors])
    if derived.fingerprint() != stored_fp:
        raise FingerprintError(
            "checkpoint fingerprint does not match its tensor shapes"
        )
    if spec is not None and spec.fingerprint() != stored_fp:
        raise FingerprintError(
            f"checkpoint architecture {derived.canonical_string()!r} does not match "
            f"expected {spec.canonical_string()!r}"
        )
    use = spec if spec is not None else derived
    return NetworkParams(
        spec=use,
        seed=None,
        conv1=ConvKernel(tensors[0], tensors[1]),
        conv2=ConvKernel(tensors[2], tensors[3]),
        fc1_w=tensors[4],
        fc1_b=tensors[5],
        fc2_w=tensors[6],
        fc2_b=tensors[7],
    )
