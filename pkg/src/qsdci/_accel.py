"""Numba switch for the hot loops.

Kernels are compiled with ``numba.njit`` when numba imports and the
environment variable ``QSDCI_DISABLE_NUMBA`` is unset (or ``0``).  Every
kernel module keeps a pure-numpy twin so both paths can be compared.
"""
import os

_flag = os.environ.get("QSDCI_DISABLE_NUMBA", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(func):
    """``numba.njit(cache=True)`` when available, else the function itself."""
    if HAVE_NUMBA:
        return _njit(cache=True)(func)
    return func


def use_numba(requested=None):
    """Resolve a per-call backend request against availability."""
    if requested is None:
        return HAVE_NUMBA
    return bool(requested) and HAVE_NUMBA
