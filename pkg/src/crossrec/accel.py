"""Numba availability probing and backend selection.

Hot kernels in :mod:`crossrec.kernels` come in two flavours: a numba
``@njit`` version and a pure-numpy fallback. The fallback is selected when
the environment variable ``CROSSREC_NO_NUMBA`` is set to a non-empty value
other than ``0``, or when numba is not importable. Both paths compute the
same quantities; ``benchmarks/bench_kernels.py`` compares their speed.
"""

import os

__all__ = ["NUMBA_AVAILABLE", "use_numba", "njit"]

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        """Decorator stub used when numba is absent; returns the function unchanged."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def _flag_disabled() -> bool:
    value = os.environ.get("CROSSREC_NO_NUMBA", "")
    return value not in ("", "0")


def use_numba() -> bool:
    """True when the numba kernel path is active for this process call."""
    return NUMBA_AVAILABLE and not _flag_disabled()
