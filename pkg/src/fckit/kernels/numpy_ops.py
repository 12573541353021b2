"""Pure-numpy kernels: 3x3 same-padding convolution and 2x2 max pooling.

The convolution is computed as nine batched matmuls over shifted views of
the zero-padded input, which keeps everything inside BLAS without
materializing a full im2col buffer.  Works for any float dtype.
"""

import numpy as np


def conv2d_run(x, w, b):
    batch, height, width, cin = x.shape
    cout = w.shape[3]
    xp = np.zeros((batch, height + 2, width + 2, cin), dtype=x.dtype)
    xp[:, 1 : height + 1, 1 : width + 1, :] = x
    x2d = xp.reshape(-1, cin)
    out = np.zeros((batch, height, width, cout), dtype=x.dtype)
    # one large GEMM per tap on the contiguous padded array, then shift-add
    full = np.empty((batch, height + 2, width + 2, cout), dtype=x.dtype)
    f2d = full.reshape(-1, cout)
    for dy in range(3):
        for dx in range(3):
            np.matmul(x2d, w[dy, dx], out=f2d)
            out += full[:, dy : dy + height, dx : dx + width, :]
    out += b
    return out


def conv2d_grads(x, w, gout):
    batch, height, width, cin = x.shape
    cout = w.shape[3]
    xp = np.zeros((batch, height + 2, width + 2, cin), dtype=x.dtype)
    xp[:, 1 : height + 1, 1 : width + 1, :] = x

    gb = gout.sum(axis=(0, 1, 2))
    g2d = np.ascontiguousarray(gout).reshape(-1, cout)
    gw = np.empty_like(w)
    gxp = np.zeros_like(xp)
    buf = np.empty((batch, height, width, cin), dtype=x.dtype)
    tmp = np.empty((batch, height, width, cin), dtype=x.dtype)
    t2d = tmp.reshape(-1, cin)
    for dy in range(3):
        for dx in range(3):
            np.copyto(buf, xp[:, dy : dy + height, dx : dx + width, :])
            gw[dy, dx] = buf.reshape(-1, cin).T @ g2d
            np.matmul(g2d, w[dy, dx].T, out=t2d)
            gxp[:, dy : dy + height, dx : dx + width, :] += tmp
    gx = gxp[:, 1 : height + 1, 1 : width + 1, :].copy()
    return gx, gw, gb


def _window_views(x, ho, wo):
    # window positions in row-major scan order (dy*2+dx)
    return (
        x[:, 0 : ho * 2 : 2, 0 : wo * 2 : 2, :],
        x[:, 0 : ho * 2 : 2, 1 : wo * 2 : 2, :],
        x[:, 1 : ho * 2 : 2, 0 : wo * 2 : 2, :],
        x[:, 1 : ho * 2 : 2, 1 : wo * 2 : 2, :],
    )


def maxpool2_run(x):
    batch, height, width, ch = x.shape
    ho, wo = height // 2, width // 2
    v0, v1, v2, v3 = _window_views(x, ho, wo)
    out = np.maximum(np.maximum(v0, v1), np.maximum(v2, v3))
    # first window position matching the max wins ties
    idx = np.full((batch, ho, wo, ch), 3, dtype=np.int8)
    idx[v2 == out] = 2
    idx[v1 == out] = 1
    idx[v0 == out] = 0
    return out, idx


def maxpool2_grads(idx, gout, height, width):
    batch, ho, wo, ch = gout.shape
    gx = np.zeros((batch, height, width, ch), dtype=gout.dtype)
    zero = gout.dtype.type(0)
    for k, view in enumerate(_window_views(gx, ho, wo)):
        view[...] = np.where(idx == k, gout, zero)
    return gx
