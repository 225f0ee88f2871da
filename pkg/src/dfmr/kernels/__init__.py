"""Hot numeric kernels with two interchangeable backends.

The backend is chosen once at import time from the ``DFMR_BACKEND``
environment variable:

``numpy`` (default)
    Vectorised kernels built on BLAS matrix products and strided windows.
``numba``
    Explicit loops compiled with ``numba.njit``. Falls back to ``numpy``
    with a warning when numba cannot be imported.

Both backends compute the same quantities in float64/complex128; the test
suite runs every kernel through both and compares them.
"""

import os
import warnings

from . import _numpy

BACKEND_ENV = "DFMR_BACKEND"


def _select(name):
    if name == "numba":
        try:
            from . import _numba
        except ImportError as exc:  # pragma: no cover - numba is installed in CI
            warnings.warn(f"numba backend unavailable ({exc}); using numpy")
            return _numpy, "numpy"
        return _numba, "numba"
    if name != "numpy":
        raise ValueError(f"{BACKEND_ENV} must be 'numpy' or 'numba', got {name!r}")
    return _numpy, "numpy"


_impl, backend = _select(os.environ.get(BACKEND_ENV, "numpy").strip().lower())

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
nudft_forward = _impl.nudft_forward
nudft_adjoint = _impl.nudft_adjoint
nudft_jacobian = _impl.nudft_jacobian


def get_backend(name):
    """Return the kernel module for ``name`` regardless of the env flag."""
    return _select(name)[0]


__all__ = [
    "backend",
    "conv2d_forward",
    "conv2d_backward",
    "nudft_forward",
    "nudft_adjoint",
    "nudft_jacobian",
    "get_backend",
]
