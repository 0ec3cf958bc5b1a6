"""Kernel backend selection.

The hot kernels (journey chaining, candidate scoring) exist twice: a numba
@njit build and a pure numpy/python fallback. Selection is controlled by the
TRIPMATCH_BACKEND environment variable:

    auto   (default) use numba when importable, else numpy
    numba  require numba, fail if unavailable
    numpy  force the fallback

Both backends produce bit-identical outputs; only speed differs. The
benchmarks/bench_backends.py script compares them.
"""

from __future__ import annotations

import importlib
import os

from .errors import ConfigError

BACKEND_ENV = "TRIPMATCH_BACKEND"

_cached: dict[str, object] = {}


def _numba_available() -> bool:
    try:
        importlib.import_module("numba")
        return True
    except ImportError:
        return False


def backend_name() -> str:
    choice = os.environ.get(BACKEND_ENV, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ConfigError(f"{BACKEND_ENV} must be auto|numba|numpy, got {choice!r}")
    if choice == "auto":
        return "numba" if _numba_available() else "numpy"
    if choice == "numba" and not _numba_available():
        raise ConfigError("TRIPMATCH_BACKEND=numba but numba is not importable")
    return choice


def get_kernels(name: str | None = None):
    """Return the kernel module for the selected backend."""
    name = name or backend_name()
    if name not in _cached:
        if name == "numba":
            _cached[name] = importlib.import_module("tripmatch._kernels_jit")
        elif name == "numpy":
            _cached[name] = importlib.import_module("tripmatch._kernels_np")
        else:
            raise ConfigError(f"unknown backend {name!r}")
    return _cached[name]
