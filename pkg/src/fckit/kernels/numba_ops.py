"""Numba-jitted kernels, float32 only.

Each output element is accumulated by exactly one sequential loop, so the
results are bitwise reproducible run to run.  ``cache=True`` persists the
compiled kernels across processes.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def conv2d_run(x, w, b):
    batch, height, width, cin = x.shape
    cout = w.shape[3]
    out = np.empty((batch, height, width, cout), dtype=x.dtype)
    for bi in range(batch):
        for y in range(height):
            for xx in range(width):
                acc = b.copy()
                for dy in range(3):
                    yy = y + dy - 1
                    if yy < 0 or yy >= height:
                        continue
                    for dx in range(3):
                        xc = xx + dx - 1
                        if xc < 0 or xc >= width:
                            continue
                        for ci in range(cin):
                            v = x[bi, yy, xc, ci]
                            for co in range(cout):
                                acc[co] += v * w[dy, dx, ci, co]
                out[bi, y, xx, :] = acc
    return out


@njit(cache=True, fastmath=True)
def conv2d_grads(x, w, gout):
    batch, height, width, cin = x.shape
    cout = w.shape[3]
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    gb = np.zeros(cout, dtype=x.dtype)
    for bi in range(batch):
        for y in range(height):
            for xx in range(width):
                for co in range(cout):
                    gb[co] += gout[bi, y, xx, co]
                for dy in range(3):
                    yy = y + dy - 1
                    if yy < 0 or yy >= height:
                        continue
                    for dx in range(3):
                        xc = xx + dx - 1
                        if xc < 0 or xc >= width:
                            continue
                        for ci in range(cin):
                            v = x[bi, yy, xc, ci]
                            s = np.float32(0.0)
                            for co in range(cout):
                                g = gout[bi, y, xx, co]
                                gw[dy, dx, ci, co] += v * g
                                s += w[dy, dx, ci, co] * g
                            gx[bi, yy, xc, ci] += s
    return gx, gw, gb


@njit(cache=True)
def maxpool2_run(x):
    batch, height, width, ch = x.shape
    ho, wo = height // 2, width // 2
    out = np.empty((batch, ho, wo, ch), dtype=x.dtype)
    idx = np.empty((batch, ho, wo, ch), dtype=np.int8)
    for bi in range(batch):
        for y in range(ho):
            for xx in range(wo):
                for c in range(ch):
                    best = x[bi, 2 * y, 2 * xx, c]
                    bpos = 0
                    for k in range(1, 4):
                        v = x[bi, 2 * y + k // 2, 2 * xx + k % 2, c]
                        if v > best:  # strict: first occurrence wins ties
                            best = v
                            bpos = k
                    out[bi, y, xx, c] = best
                    idx[bi, y, xx, c] = bpos
    return out, idx


@njit(cache=True)
def maxpool2_grads(idx, gout, height, width):
    batch, ho, wo, ch = gout.shape
    gx = np.zeros((batch, height, width, ch), dtype=gout.dtype)
    for bi in range(batch):
        for y in range(ho):
            for xx in range(wo):
                for c in range(ch):
                    k = idx[bi, y, xx, c]
                    gx[bi, 2 * y + k // 2, 2 * xx + k % 2, c] += gout[bi, y, xx, c]
    return gx
