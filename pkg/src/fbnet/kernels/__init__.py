"""Convolution kernel backend selection.

The compiled extension (fbnet.kernels._native) is preferred when built;
the numpy implementation is the always-available fallback. Selection
happens once at import. Override with FBNET_BACKEND=native|numpy
(native raises if the extension is missing instead of silently falling
back).
"""

import os

from fbnet.kernels import numpy_backend


def select_backend(requested=None):
    """Resolve the backend module and its name from FBNET_BACKEND."""
    if requested is None:
        requested = os.environ.get("FBNET_BACKEND", "auto")
    if requested not in ("auto", "native", "numpy"):
        raise ValueError(f"FBNET_BACKEND must be auto, native or numpy, got {requested!r}")
    if requested == "numpy":
        return numpy_backend, "numpy"
    try:
        from fbnet.kernels import _native
    except ImportError:
        if requested == "native":
            raise ImportError(
                "FBNET_BACKEND=native but the compiled extension is not built; "
                "run pip install -e . --no-build-isolation"
            ) from None
        return numpy_backend, "numpy"
    return _native, "native"


_impl, BACKEND = select_backend()

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight
out_size = numpy_backend.out_size
