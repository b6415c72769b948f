"""Kernel backend selection.

Numerically heavy inner loops (the graph layer forward/backward pass and
the sum-rate gradient) exist twice: a vectorized numpy implementation and
a numba ``@njit`` twin.  The active backend is chosen once at import time:
numba is used when it imports cleanly and the environment variable
``STATPREC_NUMBA`` is not set to ``"0"``.  Both implementations are always
importable directly (``kernels_np`` / ``kernels_nb``) for tests and
benchmarks.
"""

import os

_flag = os.environ.get("STATPREC_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "off")

if _want_numba:
    # the default TBB layer is version-sensitive and warns itself off on
    # some hosts; OpenMP behaves the same everywhere we run
    os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
    try:
        import numba  # noqa: F401
        NUMBA_AVAILABLE = True
    except ImportError:
        NUMBA_AVAILABLE = False
else:
    NUMBA_AVAILABLE = False

USE_NUMBA = _want_numba and NUMBA_AVAILABLE


def active_backend():
    """Name of the kernel backend selected at import time."""
    return "numba" if USE_NUMBA else "numpy"


def set_thread_cap(n):
    """Cap the worker count of parallel kernels.  No-op on numpy."""
    if USE_NUMBA and n:
        import numba

        numba.set_num_threads(max(1, min(int(n),
                                         numba.config.NUMBA_NUM_THREADS)))
