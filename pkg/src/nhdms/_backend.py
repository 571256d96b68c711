"""Kernel backend selection.

The element kernels exist twice: a vectorised numpy version and a per-tet
loop compiled with numba. ``NHDMS_BACKEND`` picks one of them at import time
(``numba`` or ``numpy``). Without the variable numba is used when it imports.
"""

import os

_REQUESTED = os.environ.get("NHDMS_BACKEND", "").strip().lower()

try:  # numba is optional at runtime
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _numba = None
    HAVE_NUMBA = False

if _REQUESTED not in ("", "numba", "numpy"):
    raise ValueError(f"NHDMS_BACKEND must be 'numba' or 'numpy', got {_REQUESTED!r}")

_active = "numpy" if (_REQUESTED == "numpy" or not HAVE_NUMBA) else "numba"


def active_backend() -> str:
    """Name of the backend used by the kernel dispatchers."""
    return _active


def set_backend(name: str) -> None:
    """Switch backend at runtime (tests and benchmarks use this)."""
    global _active
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _active = name


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return _numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f


def set_num_threads(n: int) -> None:
    """Cap numba's worker pool (no-op without numba)."""
    if HAVE_NUMBA:
        _numba.set_num_threads(max(1, min(int(n), _numba.config.NUMBA_NUM_THREADS)))
