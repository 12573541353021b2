"""Layer primitives with analytic gradients.

Every operation comes as a ``*_forward`` / ``*_backward`` pair; the forward
returns the output plus an opaque cache consumed by the backward.  Plain
``conv2d`` / ``dense`` / ... wrappers exist for inference-only use.  All
gradients are validated against central finite differences (see
``fckit.gradcheck``).

Tensors are C-order numpy arrays; the networks train in float32, the
gradient checker runs the same code in float64.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError

CE_CLAMP = 1e-7  # probability floor/ceiling before the log


# ---------------------------------------------------------------------------
# conv2d: 3x3 kernels, stride 1, zero "same" padding
# ---------------------------------------------------------------------------


def _check_conv_args(x, w, b):
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (B,H,W,Cin), got {x.shape}")
    if w.ndim != 4 or w.shape[0] != 3 or w.shape[1] != 3:
        raise ShapeError(f"conv2d kernels must be (3,3,Cin,Cout), got {w.shape}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(
            f"conv2d channel mismatch: input has {x.shape[3]}, kernels expect {w.shape[2]}"
        )
    if b.shape != (w.shape[3],):
        raise ShapeError(f"conv2d bias must be ({w.shape[3]},), got {b.shape}")


def conv2d(x, w, b):
    """Same-padding 3x3 convolution; output keeps the input's spatial dims."""
    _check_conv_args(x, w, b)
    return kernels.conv2d_run(x, w, b)


def conv2d_forward(x, w, b):
    _check_conv_args(x, w, b)
    return kernels.conv2d_run(x, w, b), (x, w)


def conv2d_backward(cache, gy):
    x, w = cache
    return kernels.conv2d_grads(x, w, gy)


# ---------------------------------------------------------------------------
# maxpool2: 2x2 window, stride 2, trailing odd row/column dropped
# ---------------------------------------------------------------------------


def _check_pool_args(x):
    if x.ndim != 4:
        raise ShapeError(f"maxpool2 input must be (B,H,W,C), got {x.shape}")
    if x.shape[1] < 2 or x.shape[2] < 2:
        raise ShapeError(f"maxpool2 needs H,W >= 2, got {x.shape}")


def maxpool2(x):
    _check_pool_args(x)
    return kernels.maxpool2_run(x)[0]


def maxpool2_forward(x):
    _check_pool_args(x)
    out, idx = kernels.maxpool2_run(x)
    return out, (idx, x.shape[1], x.shape[2])


def maxpool2_backward(cache, gy):
    idx, height, width = cache
    return kernels.maxpool2_grads(idx, gy, height, width)


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------


def _check_dense_args(x, w, b):
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"dense expects 2-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"dense inner dims disagree: input {x.shape} vs weight {w.shape}"
        )
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense bias must be ({w.shape[1]},), got {b.shape}")


def dense(x, w, b):
    _check_dense_args(x, w, b)
    return x @ w + b


def dense_forward(x, w, b):
    _check_dense_args(x, w, b)
    return x @ w + b, x


def dense_backward(cache, w, gy):
    x = cache
    return gy @ w.T, x.T @ gy, gy.sum(axis=0)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x):
    return np.maximum(x, 0)


def relu_forward(x):
    y = np.maximum(x, 0)
    return y, y > 0


def relu_backward(mask, gy):
    return gy * mask


def tanh_act(x):
    return np.tanh(x)


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(y, gy):
    return gy * (1 - y * y)


def sigmoid(x):
    # split by sign to avoid exp overflow on large negative inputs
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1 + ex)
    return out


def sigmoid_forward(x):
    y = sigmoid(x)
    return y, y


def sigmoid_backward(y, gy):
    return gy * y * (1 - y)


def softmax(x):
    """Row-stabilized softmax over the last axis."""
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_forward(x):
    y = softmax(x)
    return y, y


def softmax_backward(y, gy):
    return y * (gy - (gy * y).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# LSTM step
# ---------------------------------------------------------------------------


@dataclass
class LstmGates:
    """Per-gate weights over [x, h] plus biases, gate order i, f, g, o."""

    wi: np.ndarray
    wf: np.ndarray
    wg: np.ndarray
    wo: np.ndarray
    bi: np.ndarray
    bf: np.ndarray
    bg: np.ndarray
    bo: np.ndarray


def _check_lstm_args(x, h, c, p: LstmGates):
    n, u = x.shape[1], h.shape[1]
    if h.shape != c.shape or x.shape[0] != h.shape[0]:
        raise ShapeError(
            f"lstm_step state mismatch: x {x.shape}, h {h.shape}, c {c.shape}"
        )
    for name, w in (("wi", p.wi), ("wf", p.wf), ("wg", p.wg), ("wo", p.wo)):
        if w.shape != (n + u, u):
            raise ShapeError(f"lstm_step {name} must be ({n + u},{u}), got {w.shape}")
    for name, b in (("bi", p.bi), ("bf", p.bf), ("bg", p.bg), ("bo", p.bo)):
        if b.shape != (u,):
            raise ShapeError(f"lstm_step {name} must be ({u},), got {b.shape}")


def lstm_step(x, h, c, p: LstmGates):
    return lstm_step_forward(x, h, c, p)[:2]


def lstm_step_forward(x, h, c, p: LstmGates):
    """One LSTM cell update; returns (h', c', cache)."""
    _check_lstm_args(x, h, c, p)
    z = np.concatenate([x, h], axis=1)
    i = sigmoid(z @ p.wi + p.bi)
    f = sigmoid(z @ p.wf + p.bf)
    g = np.tanh(z @ p.wg + p.bg)
    o = sigmoid(z @ p.wo + p.bo)
    c2 = f * c + i * g
    tc = np.tanh(c2)
    h2 = o * tc
    return h2, c2, (z, i, f, g, o, c, tc)


def lstm_step_backward(cache, p: LstmGates, gh2, gc2):
    """Backward through one step.

    gh2/gc2 are the gradients arriving at h' and c'.  Returns
    (gx, gh, gc, gate gradients as an LstmGates of matching shapes).
    """
    z, i, f, g, o, c, tc = cache
    n = z.shape[1] - i.shape[1]

    go = gh2 * tc
    gc_total = gc2 + gh2 * o * (1 - tc * tc)
    gi = gc_total * g
    gf = gc_total * c
    gg = gc_total * i
    gc_prev = gc_total * f

    di = gi * i * (1 - i)
    df = gf * f * (1 - f)
    dg = gg * (1 - g * g)
    do = go * o * (1 - o)

    gz = di @ p.wi.T + df @ p.wf.T + dg @ p.wg.T + do @ p.wo.T
    grads = LstmGates(
        wi=z.T @ di,
        wf=z.T @ df,
        wg=z.T @ dg,
        wo=z.T @ do,
        bi=di.sum(axis=0),
        bf=df.sum(axis=0),
        bg=dg.sum(axis=0),
        bo=do.sum(axis=0),
    )
    return gz[:, :n], gz[:, n:], gc_prev, grads


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _loss_denom(batch, mask):
    if mask is None:
        return float(batch)
    return float(max(1, int(mask.sum())))


def mse(pred, target, mask=None):
    """Mean over the batch of squared error; masked samples are excluded."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes disagree: {pred.shape} vs {target.shape}")
    d = pred - target
    if mask is not None:
        d = d * mask.reshape(-1, *([1] * (d.ndim - 1)))
    return float((d * d).sum() / _loss_denom(pred.shape[0], mask))


def mse_backward(pred, target, mask=None):
    d = pred - target
    if mask is not None:
        d = d * mask.reshape(-1, *([1] * (d.ndim - 1)))
    return (2 * d / _loss_denom(pred.shape[0], mask)).astype(pred.dtype)


def cross_entropy(probs, targets, mask=None):
    """Mean negative log-probability of the target class.

    ``probs`` is the softmax output; probabilities are clamped to
    [CE_CLAMP, 1-CE_CLAMP] before the log.  ``mask`` marks the labeled rows
    (unlabeled rows may carry any target value and contribute nothing).
    """
    t = _checked_targets(probs, targets, mask)
    p = np.clip(probs[np.arange(probs.shape[0]), t], CE_CLAMP, 1 - CE_CLAMP)
    ll = -np.log(p)
    if mask is not None:
        ll = ll * mask
    return float(ll.sum() / _loss_denom(probs.shape[0], mask))


def cross_entropy_backward(probs, targets, mask=None):
    t = _checked_targets(probs, targets, mask)
    rows = np.arange(probs.shape[0])
    p = np.clip(probs[rows, t], CE_CLAMP, 1 - CE_CLAMP)
    inside = (probs[rows, t] > CE_CLAMP) & (probs[rows, t] < 1 - CE_CLAMP)
    g = np.zeros_like(probs)
    coeff = -inside.astype(probs.dtype) / (p * _loss_denom(probs.shape[0], mask))
    if mask is not None:
        coeff = coeff * mask
    g[rows, t] = coeff
    return g


def _checked_targets(probs, targets, mask):
    if probs.ndim != 2:
        raise ShapeError(f"cross_entropy probs must be (B,K), got {probs.shape}")
    t = np.asarray(targets)
    if t.shape != (probs.shape[0],):
        raise ShapeError(
            f"cross_entropy targets must be ({probs.shape[0]},), got {t.shape}"
        )
    k = probs.shape[1]
    live = np.ones(len(t), dtype=bool) if mask is None else mask.astype(bool)
    bad = live & ((t < 0) | (t >= k))
    if bad.any():
        raise ShapeError(
            f"cross_entropy target class out of [0,{k}): {t[bad][:5].tolist()}"
        )
    # park unlabeled rows on class 0 so the fancy index stays valid
    return np.where(live, t, 0)
