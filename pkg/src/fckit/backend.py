"""Kernel backend selection.

Two interchangeable implementations exist for the hot kernels (convolution
and pooling forward/backward): numba-jitted loops and vectorized numpy.
``FCKIT_BACKEND`` picks one explicitly ("numba" or "numpy"); unset, numba is
used when importable.  ``FCKIT_THREADS`` caps the numba worker count.

float64 work (the gradient checker) always runs on the numpy path so the
jitted kernels only ever compile their float32 specializations.

Run ``python benchmarks/bench_kernels.py`` to see which backend is faster on
a given machine; on single-core boxes the numpy path usually wins the big
convolutions because it rides BLAS.
"""

import os

from .errors import ValidationError

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

_VALID = ("numba", "numpy")
_active = None


def _resolve_from_env() -> str:
    name = os.environ.get("FCKIT_BACKEND", "").strip().lower()
    if name == "":
        return "numba" if HAS_NUMBA else "numpy"
    if name not in _VALID:
        raise ValidationError(
            f"FCKIT_BACKEND must be one of {_VALID}, got {name!r}"
        )
    if name == "numba" and not HAS_NUMBA:
        raise ValidationError("FCKIT_BACKEND=numba but numba is not installed")
    return name


def _apply_thread_cap() -> None:
    raw = os.environ.get("FCKIT_THREADS", "").strip()
    if not raw or not HAS_NUMBA:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"FCKIT_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ValidationError(f"FCKIT_THREADS must be >= 1, got {n}")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def active_backend() -> str:
    """Return the selected backend name, resolving it on first use."""
    global _active
    if _active is None:
        _active = _resolve_from_env()
        _apply_thread_cap()
    return _active


def set_backend(name: str) -> None:
    """Force a backend (mainly for tests and the benchmark harness)."""
    if name not in _VALID:
        raise ValidationError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise ValidationError("numba backend requested but numba is not installed")
    global _active
    _active = name
