"""Numba availability and the env switch between jit kernels and numpy.

Set ``SRCNET_DISABLE_NUMBA=1`` to force the pure-numpy path.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    numba = None
    NUMBA_AVAILABLE = False


def numba_disabled_by_env():
    return os.environ.get("SRCNET_DISABLE_NUMBA", "").strip().lower() not in _FALSY


numba_default = {
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
}


def njit(fn):
    """``numba.njit`` with project defaults; identity when numba is missing."""
    if not NUMBA_AVAILABLE:  # pragma: no cover
        return fn
    return numba.njit(**numba_default)(fn)


def resolve_backend(backend=None):
    """Map ``None | "numba" | "numpy"`` to the backend actually used."""
    if backend is None:
        return "numba" if NUMBA_AVAILABLE and not numba_disabled_by_env() else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}; expected 'numba' or 'numpy'")
    if backend == "numba" and not NUMBA_AVAILABLE:  # pragma: no cover
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend
