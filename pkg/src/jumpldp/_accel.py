"""Optional numba acceleration.

Kernels are written once as plain Python over numpy arrays and wrapped
with :func:`njit`. When numba is missing, or ``JUMPLDP_DISABLE_NUMBA`` is
set to a non-empty value other than ``0``, the wrapper is the identity and
the kernels run in the interpreter.
"""

from __future__ import annotations

import os

DISABLED = os.environ.get("JUMPLDP_DISABLE_NUMBA", "") not in ("", "0")

try:
    if DISABLED:
        raise ImportError("disabled by environment")
    import numba as _nb

    HAVE_NUMBA = True
except ImportError:
    _nb = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when enabled, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _nb.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend() -> str:
    return "numba" if HAVE_NUMBA else "python"
