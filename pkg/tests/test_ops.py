import math

import numpy as np
import pytest

from fckit import backend, ops
from fckit.errors import ShapeError


def test_conv2d_all_ones_kernel():
    x = np.ones((1, 3, 3, 1), dtype=np.float32)
    w = np.ones((3, 3, 1, 1), dtype=np.float32)
    b = np.zeros(1, dtype=np.float32)
    y = ops.conv2d(x, w, b)
    assert y.shape == (1, 3, 3, 1)
    assert y[0, 1, 1, 0] == 9.0
    for cy, cx in ((0, 0), (0, 2), (2, 0), (2, 2)):
        assert y[0, cy, cx, 0] == 4.0


def test_conv2d_zero_kernel_gives_bias():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 5, 5, 3)).astype(np.float32)
    w = np.zeros((3, 3, 3, 4), dtype=np.float32)
    b = np.array([0.1, -0.2, 0.3, 0.0], dtype=np.float32)
    y = ops.conv2d(x, w, b)
    assert np.array_equal(y, np.broadcast_to(b, y.shape))


def test_conv2d_output_shape():
    x = np.zeros((2, 120, 120, 3), dtype=np.float32)
    w = np.zeros((3, 3, 3, 16), dtype=np.float32)
    y = ops.conv2d(x, w, np.zeros(16, dtype=np.float32))
    assert y.shape == (2, 120, 120, 16)


def test_conv2d_preserves_spatial_dims():
    for h, w_ in [(1, 1), (1, 7), (4, 4), (9, 2)]:
        x = np.ones((1, h, w_, 2), dtype=np.float32)
        k = np.ones((3, 3, 2, 3), dtype=np.float32)
        assert ops.conv2d(x, k, np.zeros(3, np.float32)).shape == (1, h, w_, 3)


def test_conv2d_channel_mismatch_rejected():
    x = np.zeros((1, 4, 4, 3), dtype=np.float32)
    w = np.zeros((3, 3, 2, 4), dtype=np.float32)
    with pytest.raises(ShapeError):
        ops.conv2d(x, w, np.zeros(4, np.float32))


def test_conv2d_matches_direct_summation():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 6, 5, 3)).astype(np.float32)
    w = rng.standard_normal((3, 3, 3, 4)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    y = ops.conv2d(x, w, b)
    xp = np.zeros((2, 8, 7, 3), dtype=np.float64)
    xp[:, 1:7, 1:6, :] = x
    want = np.zeros((2, 6, 5, 4))
    for dy in range(3):
        for dx in range(3):
            want += xp[:, dy:dy + 6, dx:dx + 5, :] @ w[dy, dx].astype(np.float64)
    want += b
    assert np.allclose(y, want, atol=1e-4)


def test_maxpool2_examples():
    x = np.array([[[[1.0], [2.0]], [[3.0], [4.0]]]], dtype=np.float32)
    y = ops.maxpool2(x)
    assert y.shape == (1, 1, 1, 1)
    assert y[0, 0, 0, 0] == 4.0

    const = np.full((1, 4, 4, 2), 0.7, dtype=np.float32)
    yc = ops.maxpool2(const)
    assert np.array_equal(yc, np.full((1, 2, 2, 2), 0.7, dtype=np.float32))


def test_maxpool2_halving_chain():
    x = np.zeros((1, 120, 120, 1), dtype=np.float32)
    sizes = []
    for _ in range(4):
        x = ops.maxpool2(x)
        sizes.append(x.shape[1])
    assert sizes == [60, 30, 15, 7]


def test_maxpool2_equals_window_scan():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 6, 8, 3)).astype(np.float32)
    y = ops.maxpool2(x)
    for b in range(2):
        for i in range(3):
            for j in range(4):
                for c in range(3):
                    window = x[b, 2 * i:2 * i + 2, 2 * j:2 * j + 2, c]
                    assert y[b, i, j, c] == window.max()


def test_maxpool2_drops_odd_edge():
    x = np.arange(5 * 5, dtype=np.float32).reshape(1, 5, 5, 1)
    assert ops.maxpool2(x).shape == (1, 2, 2, 1)


def test_maxpool2_rejects_tiny_input():
    with pytest.raises(ShapeError):
        ops.maxpool2(np.zeros((1, 1, 4, 1), dtype=np.float32))


def test_maxpool2_tie_routes_to_first_in_scan_order():
    x = np.zeros((1, 2, 2, 1), dtype=np.float32)
    y, cache = ops.maxpool2_forward(x)
    g = ops.maxpool2_backward(cache, np.ones_like(y))
    assert g[0, 0, 0, 0] == 1.0
    assert g.sum() == 1.0


def test_dense_examples():
    x = np.array([[1.0, 2.0]], dtype=np.float32)
    w = np.array([[1.0], [1.0]], dtype=np.float32)
    b = np.array([0.5], dtype=np.float32)
    assert ops.dense(x, w, b)[0, 0] == 3.5

    ident = np.eye(3, dtype=np.float32)
    x3 = np.array([[4.0, 5.0, 6.0]], dtype=np.float32)
    assert np.array_equal(ops.dense(x3, ident, np.zeros(3, np.float32)), x3)


def test_dense_shape_and_mismatch():
    x = np.zeros((4, 3920), dtype=np.float32)
    w = np.zeros((3920, 500), dtype=np.float32)
    assert ops.dense(x, w, np.zeros(500, np.float32)).shape == (4, 500)
    with pytest.raises(ShapeError):
        ops.dense(x, np.zeros((10, 5), np.float32), np.zeros(5, np.float32))


def test_activation_examples():
    assert np.array_equal(
        ops.relu(np.array([-1.0, 0.0, 2.0], dtype=np.float32)),
        np.array([0.0, 0.0, 2.0], dtype=np.float32),
    )
    s = ops.softmax(np.array([[0.0, 0.0]], dtype=np.float32))
    assert np.allclose(s, [[0.5, 0.5]])
    assert ops.sigmoid(np.zeros((1, 1), np.float32))[0, 0] == 0.5
    assert ops.tanh_act(np.zeros((1, 1), np.float32))[0, 0] == 0.0


def test_softmax_rows_normalized():
    rng = np.random.default_rng(7)
    x = (8 * rng.standard_normal((20, 7))).astype(np.float32)
    y = ops.softmax(x)
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-6)
    assert (y > 0).all() and (y < 1).all()


def _gates(n, u, rng=None):
    def w():
        if rng is None:
            return np.zeros((n + u, u), dtype=np.float32)
        return (0.1 * rng.standard_normal((n + u, u))).astype(np.float32)

    def b():
        if rng is None:
            return np.zeros(u, dtype=np.float32)
        return (0.1 * rng.standard_normal(u)).astype(np.float32)

    return ops.LstmGates(wi=w(), wf=w(), wg=w(), wo=w(),
                         bi=b(), bf=b(), bg=b(), bo=b())


def test_lstm_step_zero_params_fixed_point():
    params = _gates(4, 3)
    x = np.ones((2, 4), dtype=np.float32)
    h = np.zeros((2, 3), dtype=np.float32)
    c = np.zeros((2, 3), dtype=np.float32)
    for _ in range(5):
        h, c, _ = ops.lstm_step_forward(x, h, c, params)
    assert np.array_equal(h, np.zeros((2, 3), np.float32))
    assert np.array_equal(c, np.zeros((2, 3), np.float32))


def test_lstm_step_shapes():
    rng = np.random.default_rng(9)
    params = _gates(500, 100, rng)
    x = rng.standard_normal((2, 500)).astype(np.float32)
    h = np.zeros((2, 100), dtype=np.float32)
    c = np.zeros((2, 100), dtype=np.float32)
    h2, c2, _ = ops.lstm_step_forward(x, h, c, params)
    assert h2.shape == (2, 100) and c2.shape == (2, 100)


def test_loss_examples():
    assert ops.mse(np.array([[0.5]], np.float32), np.array([[0.5]], np.float32)) == 0.0
    assert ops.mse(np.array([[0.0], [1.0]], np.float32),
                   np.array([[1.0], [1.0]], np.float32)) == 0.5
    uniform = np.full((3, 7), 1 / 7, dtype=np.float32)
    ce = ops.cross_entropy(uniform, np.array([0, 3, 6]))
    assert abs(ce - math.log(7)) < 1e-6


def test_cross_entropy_rejects_bad_class():
    probs = np.full((2, 7), 1 / 7, dtype=np.float32)
    with pytest.raises(ShapeError):
        ops.cross_entropy(probs, np.array([0, 7]))
    with pytest.raises(ShapeError):
        ops.cross_entropy(probs, np.array([-1, 0]))


def test_forward_determinism():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((2, 8, 8, 3)).astype(np.float32)
    w = rng.standard_normal((3, 3, 3, 5)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    assert np.array_equal(ops.conv2d(x, w, b), ops.conv2d(x, w, b))


def test_backends_agree_on_conv_and_pool():
    if not backend.HAS_NUMBA:
        pytest.skip("numba not importable")
    rng = np.random.default_rng(21)
    x = rng.standard_normal((2, 12, 12, 4)).astype(np.float32)
    w = rng.standard_normal((3, 3, 4, 6)).astype(np.float32)
    b = rng.standard_normal(6).astype(np.float32)
    g = rng.standard_normal((2, 12, 12, 6)).astype(np.float32)
    try:
        backend.set_backend("numpy")
        y_np = ops.conv2d(x, w, b)
        gx_np, gw_np, gb_np = _conv_grads(x, w, b, g)
        p_np, i_np = ops.maxpool2(x)
        backend.set_backend("numba")
        y_nb = ops.conv2d(x, w, b)
        gx_nb, gw_nb, gb_nb = _conv_grads(x, w, b, g)
        p_nb, i_nb = ops.maxpool2(x)
    finally:
        backend.set_backend("numpy")
    scale = np.abs(gw_np).max()
    assert np.allclose(y_np, y_nb, rtol=1e-4, atol=1e-5)
    assert np.allclose(gx_np, gx_nb, rtol=1e-4, atol=1e-5)
    assert np.allclose(gw_np, gw_nb, rtol=1e-4, atol=1e-5 * max(scale, 1.0))
    assert np.array_equal(gb_np, gb_nb)
    # pooling is pure selection, so the backends agree bitwise
    assert np.array_equal(p_np, p_nb)
    assert np.array_equal(i_np, i_nb)


def _conv_grads(x, w, b, g):
    _, cache = ops.conv2d_forward(x, w, b)
    return ops.conv2d_backward(cache, g)
