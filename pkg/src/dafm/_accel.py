"""Numba acceleration shim.

Hot numerical kernels are written in nopython-compatible, vectorized numpy and
decorated with :func:`njit`.  When numba is importable (and the environment
variable ``DAFM_DISABLE_NUMBA`` is unset) the decorator compiles them; setting
``DAFM_DISABLE_NUMBA=1`` before import selects the pure-numpy fallback, where
the decorator is a no-op and the identical source runs uncompiled.  Results of
the two modes agree up to floating-point rounding of the underlying BLAS and
summation order.
"""

import os

__all__ = ["njit", "NUMBA_ENABLED"]


def _identity_jit(*args, **kwargs):
    """Decorator stand-in used when numba is disabled or unavailable."""
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(func):
        return func

    return wrap


_disabled = os.environ.get("DAFM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

if _disabled:
    njit = _identity_jit
    NUMBA_ENABLED = False
else:
    try:
        from numba import njit  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is installed in CI
        njit = _identity_jit
        NUMBA_ENABLED = False
