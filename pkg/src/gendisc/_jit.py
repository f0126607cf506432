"""Numba dispatch for the hot kernels.

Set ``GENDISC_DISABLE_NUMBA=1`` to run every kernel as plain numpy. Kernels
are written once in numpy-compatible Python; when numba is importable and not
disabled the same source is compiled with ``njit``.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_DISABLED = os.environ.get("GENDISC_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")
USE_NUMBA = numba is not None and not NUMBA_DISABLED


def jit_pair(fn):
    """Return ``(python_fn, compiled_fn)``; ``compiled_fn`` is ``None`` without numba."""
    if numba is None:
        return fn, None
    return fn, numba.njit(cache=True, fastmath=False)(fn)


def select(pair):
    py_fn, jit_fn = pair
    if USE_NUMBA and jit_fn is not None:
        return jit_fn
    return py_fn
