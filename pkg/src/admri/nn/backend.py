"""Kernel backend selection, fixed at import time.

Prefers the compiled extension and falls back to the numpy implementation
when the extension is not built. ``ADMRI_KERNELS=numpy`` or
``ADMRI_KERNELS=cython`` forces a backend; forcing cython without the built
extension raises so a silent slowdown can't masquerade as the fast path.
"""

import os

from . import kernels_numpy

_requested = os.environ.get("ADMRI_KERNELS", "").strip().lower()
if _requested not in ("", "numpy", "cython"):
    raise ValueError(f"ADMRI_KERNELS must be 'numpy' or 'cython', got {_requested!r}")

if _requested == "numpy":
    _impl = kernels_numpy
    KERNEL_BACKEND = "numpy"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        KERNEL_BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "ADMRI_KERNELS=cython but the admri.nn._ckernels extension is not built"
            ) from None
        _impl = kernels_numpy
        KERNEL_BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward
