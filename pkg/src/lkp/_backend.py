"""Kernel backend selection.

Hot loops are written twice: scalar loops compiled with numba, and a
vectorized pure-numpy path. Set ``LKP_DISABLE_NUMBA=1`` (or run without numba
installed) to force the numpy path.
"""

from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("LKP_DISABLE_NUMBA", "").strip().lower() not in (
    "1",
    "true",
    "yes",
    "on",
)


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op decorator without numba."""
    if not NUMBA_AVAILABLE:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


if NUMBA_AVAILABLE:
    prange = numba.prange
else:  # pragma: no cover
    prange = range


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def set_threads(n: int) -> None:
    """Cap the numba worker pool; a no-op on the numpy path."""
    if NUMBA_AVAILABLE and n >= 1:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
