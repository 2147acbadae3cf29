"""Backend selection for the compiled kernels.

``DSFKIT_BACKEND=numpy`` forces the pure-numpy path; anything else (or unset)
uses numba when it imports cleanly. ``DSFKIT_THREADS`` caps the worker count
used by the parallel kernels.
"""
import os

BACKEND_ENV = "DSFKIT_BACKEND"
THREADS_ENV = "DSFKIT_THREADS"

try:
    import numba as _numba
except Exception:  # pragma: no cover - numba is a declared dependency
    _numba = None
else:
    # the system TBB is too old for numba; OpenMP is safe for concurrent callers
    if "NUMBA_THREADING_LAYER" not in os.environ:
        _numba.config.THREADING_LAYER = "omp"


def numba_available() -> bool:
    return _numba is not None


def requested_backend() -> str:
    val = os.environ.get(BACKEND_ENV, "").strip().lower()
    if val in ("numpy", "python", "off", "0"):
        return "numpy"
    return "numba" if _numba is not None else "numpy"


def use_numba() -> bool:
    return requested_backend() == "numba"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator."""
    if _numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)


def set_threads(n=None) -> int:
    """Set the kernel thread count. ``None`` reads ``DSFKIT_THREADS``.

    Results never depend on the count: parallel kernels write into
    per-index slots that are reduced in a fixed order afterwards.
    """
    if n is None:
        env = os.environ.get(THREADS_ENV)
        if not env:
            return get_threads()
        n = int(env)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if _numba is None:
        return 1
    n = min(int(n), _numba.config.NUMBA_NUM_THREADS)
    _numba.set_num_threads(n)
    return n


def get_threads() -> int:
    if _numba is None:
        return 1
    return _numba.get_num_threads()
