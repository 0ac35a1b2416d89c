"""Kernel backend selection.

The loop-heavy kernels (conv2d, maxpool2d, selective scan) exist twice:
a pure-numpy implementation and a numba @njit one.  The env var
``GCVK_BACKEND`` picks the default ("numba", "numpy" or "auto"); code can
override it locally with :func:`use`.  ``GCVK_THREADS`` caps the numba
thread pool.

Both backends are deterministic run-to-run; they may differ from each
other at the level of floating-point rounding (different accumulation
orders), so cross-backend comparisons use tolerances.
"""

from __future__ import annotations

import contextlib
import os

from .errors import ConfigError

_CHOICES = ("auto", "numpy", "numba")

_numba_ok: bool | None = None
_override: str | None = None
_threads_applied = False


def _probe_numba() -> bool:
    global _numba_ok
    if _numba_ok is None:
        try:
            import numba  # noqa: F401

            _numba_ok = True
        except ImportError:
            _numba_ok = False
    return _numba_ok


def _env_choice() -> str:
    raw = os.environ.get("GCVK_BACKEND", "auto").lower()
    if raw not in _CHOICES:
        raise ConfigError(
            f"GCVK_BACKEND must be one of {_CHOICES}, got {raw!r}"
        )
    return raw


def thread_cap() -> int | None:
    raw = os.environ.get("GCVK_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GCVK_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError("GCVK_THREADS must be >= 1")
    return n


def _apply_thread_cap() -> None:
    global _threads_applied
    if _threads_applied:
        return
    cap = thread_cap()
    if cap is not None:
        import numba

        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))
    _threads_applied = True


def active() -> str:
    """Resolve the backend in effect: "numpy" or "numba"."""
    choice = _override if _override is not None else _env_choice()
    if choice == "numba" and not _probe_numba():
        raise ConfigError("GCVK_BACKEND=numba but numba is not importable")
    if choice == "auto":
        choice = "numba" if _probe_numba() else "numpy"
    if choice == "numba":
        _apply_thread_cap()
    return choice


def set_backend(name: str) -> None:
    """Force a backend for the rest of the process ("auto" to unset)."""
    global _override
    if name not in _CHOICES:
        raise ConfigError(f"backend must be one of {_CHOICES}, got {name!r}")
    _override = None if name == "auto" else name


@contextlib.contextmanager
def use(name: str):
    """Temporarily force a backend (for tests and A/B benchmarks)."""
    global _override
    prev = _override
    set_backend(name)
    try:
        yield
    finally:
        _override = prev
