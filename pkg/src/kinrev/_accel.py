"""Numba acceleration shim.

Hot kernels throughout the package are decorated with :func:`njit` from this
module.  By default that is numba's ``njit`` (with on-disk caching).  Setting
the environment variable ``KINREV_NO_NUMBA=1`` before import turns the
decorator into a no-op, so every kernel runs as plain Python over numpy
arrays.  Results are identical in both modes; only speed differs.  See
``benchmarks/bench_accel.py`` for a comparison.
"""

from __future__ import annotations

import os

NUMBA_ENABLED = os.environ.get("KINREV_NO_NUMBA", "0").lower() not in ("1", "true", "yes")

if NUMBA_ENABLED:
    try:
        import numba

        def njit(*args, **kwargs):
            kwargs.setdefault("cache", True)
            return numba.njit(*args, **kwargs)

    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap
