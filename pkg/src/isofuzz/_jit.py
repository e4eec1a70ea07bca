"""Switch between numba-compiled kernels and the plain-Python fallback.

Set ``ISOFUZZ_NO_JIT=1`` in the environment before importing :mod:`isofuzz`
to run every kernel as ordinary Python over numpy arrays.  The fallback is
bit-for-bit equivalent but one to two orders of magnitude slower.
"""
import contextlib
import os

import numpy as np

_FLAG = os.environ.get("ISOFUZZ_NO_JIT", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, otherwise an identity decorator."""
    if USE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def kernel_errstate():
    """Silence numpy scalar wraparound warnings on the fallback path.

    64-bit register arithmetic wraps by design; compiled code never warns.
    """
    if USE_NUMBA:
        return contextlib.nullcontext()
    return np.errstate(over="ignore")


def backend_name() -> str:
    return "numba" if USE_NUMBA else "python"
