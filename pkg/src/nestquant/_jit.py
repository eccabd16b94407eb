"""Backend selection for the hot kernels.

Set ``NESTQUANT_NUMBA=0`` before import to force the pure-numpy path.
"""
import os

_FLAG = os.environ.get("NESTQUANT_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("0", "off", "false", "no")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is usable, else identity.

    The numba-compiled variants are only dispatched to when USE_NUMBA is set,
    but they stay importable (and callable in pure Python) either way so the
    benchmark can compare both paths in one process.
    """
    if numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
