"""Hot per-pixel kernels with a numba path and a pure-numpy fallback.

The active backend is chosen once at import time from ``PCSR_BACKEND``
(``numba`` by default, ``numpy`` to force the fallback). Both implementations
stay importable as :data:`numba_impl` and :data:`numpy_impl` so callers can
compare them directly.
"""
import logging
import os

from . import _numpy as numpy_impl

logger = logging.getLogger(__name__)

try:
    from . import _numba as numba_impl
except ImportError:  # numba missing or broken for this interpreter
    numba_impl = None

BACKENDS = ("numba", "numpy")


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: ``PCSR_BACKEND``)."""
    name = (name or os.environ.get("PCSR_BACKEND", "numba")).lower()
    if name not in BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; expected one of {BACKENDS}")
    if name == "numba":
        if numba_impl is None:
            logger.warning("numba unavailable, falling back to numpy kernels")
            return numpy_impl
        return numba_impl
    return numpy_impl


active = get_backend()
BACKEND = "numba" if active is numba_impl else "numpy"

conv2d = active.conv2d
mlp_forward = active.mlp_forward
refine = active.refine
kmeans_1d = active.kmeans_1d

__all__ = [
    "BACKEND", "BACKENDS", "active", "get_backend", "numba_impl", "numpy_impl",
    "conv2d", "mlp_forward", "refine", "kmeans_1d",
]
