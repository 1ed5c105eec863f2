"""Numba switch and the counter-based random stream shared by both backends.

Set ``HETEROROBUST_NUMBA=0`` to force the pure-numpy kernels. The choice can
also be changed at runtime with :func:`set_backend`, which the benchmark and
the backend-equivalence tests use.
"""

import os

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_flag = os.environ.get("HETEROROBUST_NUMBA", "1").strip().lower()
USE_NUMBA = HAVE_NUMBA and _flag not in ("0", "false", "no", "off")


def set_backend(name):
    global USE_NUMBA
    if name not in ("numba", "numpy"):
        raise ValueError("backend must be 'numba' or 'numpy'")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    USE_NUMBA = name == "numba"


def backend():
    return "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise."""
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / 9007199254740992.0


@njit
def _mix(x):
    z = x + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


@njit
def counter_uniform(seed, stream, i, key):
    """Uniform [0, 1) value determined by ``(seed, stream, i, key)`` alone."""
    h = _mix(np.uint64(seed))
    h = _mix(h ^ np.uint64(stream))
    h = _mix(h ^ np.uint64(i))
    h = _mix(h ^ np.uint64(key))
    return np.float64(h >> np.uint64(11)) * _INV53


def _mix_np(x):
    z = x + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def counter_uniform_np(seed, stream, i, key):
    """Vectorized :func:`counter_uniform`; ``i`` and ``key`` broadcast."""
    i = np.asarray(i, dtype=np.uint64)
    key = np.asarray(key, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix_np(np.asarray(seed, dtype=np.uint64))
        h = _mix_np(h ^ np.uint64(stream))
        h = _mix_np(h ^ i)
        h = _mix_np(h ^ key)
    return (h >> np.uint64(11)).astype(np.float64) * _INV53
