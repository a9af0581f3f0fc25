"""Numba switch for the hot numeric kernels.

Every kernel in the package is written once, in numpy-compatible Python.
With ``RACETUNE_NUMBA=0`` in the environment the kernels run as plain
Python/numpy; otherwise they are compiled with ``numba.njit``.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("RACETUNE_NUMBA", "1").strip().lower()

NUMBA_ENABLED = _FLAG not in ("0", "false", "no", "off")

if NUMBA_ENABLED:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a hard dependency
        NUMBA_ENABLED = False


def jit(fn):
    """Compile ``fn`` in nopython mode when numba is enabled."""
    if NUMBA_ENABLED:
        return numba.njit(cache=True, fastmath=False)(fn)
    return fn


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
