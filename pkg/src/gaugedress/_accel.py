"""Accelerator selection.

Hot kernels are written twice: once as numba ``@njit`` loops and once as
vectorised numpy.  Setting ``GAUGEDRESS_NUMBA=0`` in the environment before
import selects the numpy path everywhere; otherwise numba is used when it can
be imported.
"""

from __future__ import annotations

import os

_flag = os.environ.get("GAUGEDRESS_NUMBA", "1").strip().lower()
_REQUESTED = _flag not in ("0", "false", "no", "off")

try:  # pragma: no cover - exercised implicitly
    import numba as _numba

    # the system TBB is too old for numba; prefer OpenMP
    _numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _REQUESTED


def njit(*args, **kwargs):
    """Return ``numba.njit`` when available, else an identity decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)

    def deco(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return deco


prange = _numba.prange if HAVE_NUMBA else range


def set_threads(n: int) -> int:
    """Set the numba thread count, clamped to what the runtime allows.

    Returns the number of threads actually in use.
    """
    n = max(1, int(n))
    if not HAVE_NUMBA:
        return 1
    n = min(n, _numba.config.NUMBA_NUM_THREADS)
    _numba.set_num_threads(n)
    return n


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
