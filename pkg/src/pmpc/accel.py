"""Numba acceleration switch.

Hot kernels (QP factorization/iterations, batched rollouts and
linearization) are compiled with numba unless the environment variable
``PMPC_DISABLE_NUMBA`` is set to 1/true/yes, in which case the pure
numpy implementations are used.  ``force_numpy`` flips the switch at
runtime (used by tests and the benchmark to compare both paths in one
process).
"""

from __future__ import annotations

import os
from contextlib import contextmanager

_DISABLED_BY_ENV = os.environ.get("PMPC_DISABLE_NUMBA", "0").lower() in (
    "1",
    "true",
    "yes",
)

try:  # pragma: no cover - exercised implicitly by every import
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

_forced_numpy = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator.

    Kernels are still compiled when the env flag disables numba (the
    flag only routes calls to the numpy path); compilation is skipped
    only when numba is not importable at all.
    """
    if not HAVE_NUMBA:
        def wrap(fn):
            return fn

        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return wrap
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def numba_active() -> bool:
    """True when calls should dispatch to the compiled kernels."""
    return HAVE_NUMBA and not _DISABLED_BY_ENV and not _forced_numpy


@contextmanager
def force_numpy():
    """Temporarily route all dispatches to the numpy implementations."""
    global _forced_numpy
    prev = _forced_numpy
    _forced_numpy = True
    try:
        yield
    finally:
        _forced_numpy = prev
