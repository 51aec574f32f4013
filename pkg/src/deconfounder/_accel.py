"""Backend selection for the hot kernels.

Numba is used when it imports cleanly and ``DECONFOUNDER_DISABLE_NUMBA`` is
unset (or set to 0/false/no). The pure-numpy path is always available and is
selected at call time, so tests and benchmarks can switch between the two.
"""

from __future__ import annotations

import contextlib
import os

try:
    import numba as _numba
except ImportError:  # pragma: no cover - exercised only without numba
    _numba = None

NUMBA_AVAILABLE = _numba is not None

_FALSY = {"", "0", "false", "no", "off"}


def _env_disabled() -> bool:
    return os.environ.get("DECONFOUNDER_DISABLE_NUMBA", "").strip().lower() not in _FALSY


_state = {"backend": "numba" if NUMBA_AVAILABLE and not _env_disabled() else "numpy"}


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    options = {"cache": True, "nogil": True}
    options.update(kwargs)

    def wrap(f):
        if _numba is None:
            return f
        return _numba.njit(**options)(f)

    return wrap if func is None else wrap(func)


def backend() -> str:
    return _state["backend"]


def set_backend(name: str) -> None:
    if name not in ("numba", "numpy"):
        raise ValueError("backend must be 'numba' or 'numpy'")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    _state["backend"] = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)
