"""Layer math and the small CNN built from it.

``admri.nn.ops`` holds per-sample layer operations, ``admri.nn.network`` the
batched model. Conv and pool inner loops run in a compiled extension when
built, with a numpy fallback (see ``admri.nn.backend``).
"""

from .backend import KERNEL_BACKEND

__all__ = ["KERNEL_BACKEND", "backend", "network", "ops"]
