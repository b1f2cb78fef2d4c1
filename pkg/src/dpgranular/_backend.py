"""Kernel backend selection.

The hot loops in :mod:`dpgranular.kernels` exist twice: a numba version and a
pure-numpy version. ``DPGRANULAR_BACKEND=numpy`` forces the numpy code path;
the default ``numba`` silently falls back to numpy when numba is missing.
"""

from __future__ import annotations

import os

try:  # pragma: no cover - exercised implicitly
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

_requested = os.environ.get("DPGRANULAR_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"DPGRANULAR_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

HAVE_NUMBA = _numba is not None
BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if _numba is None:
        return func
    return _numba.njit(cache=True)(func)
