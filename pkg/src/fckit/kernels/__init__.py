"""Hot-kernel dispatch.

conv2d and maxpool2 forward/backward dominate training time, so they exist
twice: vectorized numpy (``numpy_ops``) and numba-jitted loops
(``numba_ops``).  Both produce the same results (the numba path is compiled
for float32 only; float64 inputs always use the numpy path so the gradient
checker runs at full precision without extra JIT specializations).
"""

import numpy as np

from ..backend import HAS_NUMBA, active_backend
from . import numpy_ops

if HAS_NUMBA:
    from . import numba_ops


def _use_numba(x: np.ndarray) -> bool:
    return x.dtype == np.float32 and active_backend() == "numba"


def conv2d_run(x, w, b):
    if _use_numba(x):
        return numba_ops.conv2d_run(x, w, b)
    return numpy_ops.conv2d_run(x, w, b)


def conv2d_grads(x, w, gout):
    if _use_numba(x):
        return numba_ops.conv2d_grads(x, w, gout)
    return numpy_ops.conv2d_grads(x, w, gout)


def maxpool2_run(x):
    if _use_numba(x):
        return numba_ops.maxpool2_run(x)
    return numpy_ops.maxpool2_run(x)


def maxpool2_grads(idx, gout, height, width):
    if _use_numba(gout):
        return numba_ops.maxpool2_grads(idx, gout, height, width)
    return numpy_ops.maxpool2_grads(idx, gout, height, width)
