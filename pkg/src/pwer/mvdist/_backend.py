"""Selects the integrand kernel at import time.

The compiled kernel is preferred; the NumPy twin is used when the extension
was not built or when ``PWER_PURE_PYTHON`` is set (useful for testing and
benchmarking both paths).
"""

import os

if os.environ.get("PWER_PURE_PYTHON"):
    from . import _kernel_py as kernel
else:
    try:
        from . import _kernel as kernel  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernel_py as kernel

BACKEND = kernel.BACKEND_NAME
