"""admri: Alzheimer's-vs-control structural MRI slice classification pipeline.

Subpackages and modules are imported explicitly (``admri.nn.network``,
``admri.dataset``, ...); this top-level module stays import-light so the CLI
can pin threading environment variables before numpy loads.
"""

__version__ = "0.1.0"

__all__ = [
    "config",
    "dataset",
    "errors",
    "harness",
    "hashing",
    "nn",
    "optim",
    "phantom",
    "preprocess",
    "volume",
]
