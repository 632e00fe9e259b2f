"""Backend selection for the MM inner loop.

The compiled kernel is preferred when importable; setting the
environment variable ``SAFCOV_NO_EXT=1`` before import forces the
pure-numpy reference implementation (useful for debugging and for the
parity benchmark).  Both expose the same ``run_mm`` contract.
"""

import os

from . import _mm_numpy

if os.environ.get("SAFCOV_NO_EXT", "").strip() in ("1", "true", "yes"):
    _impl = _mm_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _mm_kernel as _impl
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on build environment
        _impl = _mm_numpy
        BACKEND = "numpy"

run_mm = _impl.run_mm
run_mm_numpy = _mm_numpy.run_mm
