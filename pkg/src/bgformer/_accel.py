"""Numba switch.

Set ``BGFORMER_NUMBA=0`` to force the pure-numpy kernels. When numba is not
importable the numpy kernels are used regardless of the flag.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an install requirement
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("BGFORMER_NUMBA", "1").strip() != "0"


def njit(fn):
    """``numba.njit(cache=True)`` when numba is installed, otherwise identity."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True)(fn)
