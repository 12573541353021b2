import numpy as np
import pytest

from fckit import model, ops
from fckit.errors import ShapeError, ValidationError


@pytest.fixture(scope="module")
def fc():
    return model.build_facechannel(seed=2020)


@pytest.fixture(scope="module")
def fcs(fc):
    return model.build_facechannels(fc, mode="fine-tune", seed=2021)


def test_structural_counts(fc):
    assert fc.conv_layer_count() == 10
    assert fc.pool_layer_count() == 4
    assert fc.trunk_width() == 500
    assert set(fc.heads) == {"arousal", "valence", "expression"}


def test_parameter_counts(fc, fcs):
    assert model.count_params(fc) == 2_235_537
    assert 1_800_000 <= model.count_params(fc) <= 2_600_000
    assert model.count_params(fcs) == 2_482_437
    head_params = sum(
        layer.w.value.size + layer.b.value.size for layer in fc.heads.values()
    )
    assert head_params == 4_509
    added = model.count_params(fcs) - (model.count_params(fc) - head_params)
    assert added == 251_409


def test_fcs_adds_lstm100_dense100(fcs):
    assert fcs.lstm.units == 100
    assert fcs.seq_dense.n_out == 100
    assert fcs.seq_dense.n_in == 100  # sequential wiring reads the lstm state


def test_frame_forward_shapes(fc):
    rng = np.random.default_rng(0)
    batch = rng.uniform(0, 1, (2, 120, 120, 3)).astype(np.float32)
    preds = fc.forward_frame(batch)
    assert preds.arousal.shape == (2, 1)
    assert preds.valence.shape == (2, 1)
    assert preds.expression.shape == (2, 7)
    assert np.all(np.abs(preds.arousal) <= 1.0)
    assert np.all(np.abs(preds.valence) <= 1.0)
    assert np.allclose(preds.expression.sum(axis=1), 1.0, atol=1e-6)


def test_frame_forward_rejects_wrong_dims(fc):
    with pytest.raises(ShapeError):
        fc.forward_frame(np.zeros((1, 64, 64, 3), dtype=np.float32))


def test_frame_forward_deterministic(fc):
    rng = np.random.default_rng(1)
    batch = rng.uniform(0, 1, (2, 120, 120, 3)).astype(np.float32)
    a = fc.forward_frame(batch)
    b = fc.forward_frame(batch)
    assert np.array_equal(a.arousal, b.arousal)
    assert np.array_equal(a.expression, b.expression)


def test_spatial_trace(fc):
    x = np.zeros((1, 120, 120, 3), dtype=np.float32)
    sizes = [120]
    for layer in fc.trunk:
        x = layer.forward(x)
        if x.ndim == 4 and x.shape[1] != sizes[-1]:
            sizes.append(x.shape[1])
        if x.ndim == 2:
            break
    assert sizes == [120, 60, 30, 15, 7]


def test_flatten_width(fc):
    x = np.zeros((1, 120, 120, 3), dtype=np.float32)
    for layer in fc.trunk:
        x = layer.forward(x)
        if x.ndim == 2:
            assert x.shape[1] in (3920, 500)
            if x.shape[1] == 3920:
                return
    pytest.fail("flatten output never seen")


def test_zero_heads_predict_zero(fc):
    graph = model.build_facechannel(seed=3)
    for head in graph.heads.values():
        head.w.value[...] = 0.0
        head.b.value[...] = 0.0
    preds = graph.forward_frame(np.random.default_rng(0)
                                .uniform(0, 1, (3, 120, 120, 3))
                                .astype(np.float32))
    assert np.array_equal(preds.arousal, np.zeros((3, 1), np.float32))
    assert np.array_equal(preds.valence, np.zeros((3, 1), np.float32))
    assert np.allclose(preds.expression, 1 / 7)


def test_sequence_forward_shapes(fcs):
    rng = np.random.default_rng(2)
    clips = rng.uniform(0, 1, (3, 10, 120, 120, 3)).astype(np.float32)
    preds = fcs.forward_sequence(clips)
    assert preds.arousal.shape == (3, 1)
    assert preds.valence.shape == (3, 1)
    assert preds.expression.shape == (3, 7)


def test_sequence_rejects_wrong_length(fcs):
    with pytest.raises(ShapeError):
        fcs.forward_sequence(np.zeros((1, 9, 120, 120, 3), dtype=np.float32))


def test_sequence_zero_lstm_gives_zero_arousal(fc):
    graph = model.build_facechannels(fc, mode="fine-tune", seed=5)
    for name, p in graph.params.items():
        if name.startswith("lstm."):
            p.value[...] = 0.0
    for head in graph.heads.values():
        head.b.value[...] = 0.0
    frame = np.random.default_rng(3).uniform(0, 1, (120, 120, 3)).astype(np.float32)
    clip = np.broadcast_to(frame, (1, 10, 120, 120, 3)).astype(np.float32)
    preds = graph.forward_sequence(clip)
    assert preds.arousal[0, 0] == 0.0
    assert preds.valence[0, 0] == 0.0


def test_sequence_order_sensitivity(fcs):
    rng = np.random.default_rng(4)
    clip = rng.uniform(0, 1, (1, 10, 120, 120, 3)).astype(np.float32)
    permuted = clip[:, ::-1].copy()
    a = fcs.forward_sequence(clip)
    b = fcs.forward_sequence(permuted)
    assert not np.array_equal(a.arousal, b.arousal)


def test_sequence_batch_independence(fcs):
    rng = np.random.default_rng(6)
    clips = rng.uniform(0, 1, (3, 10, 120, 120, 3)).astype(np.float32)
    together = fcs.forward_sequence(clips)
    for i in range(3):
        alone = fcs.forward_sequence(clips[i:i + 1])
        assert np.allclose(together.arousal[i], alone.arousal[0], atol=1e-5)
        assert np.allclose(together.expression[i], alone.expression[0], atol=1e-5)


def test_fcs_trunk_copied_heads_fresh(fc, fcs):
    # trunk weights transfer from the base model, heads start over
    assert np.array_equal(fcs.params["conv1.w"].value, fc.params["conv1.w"].value)
    assert np.array_equal(fcs.params["trunk.w"].value, fc.params["trunk.w"].value)
    assert fcs.params["head_arousal.w"].value.shape != fc.params["head_arousal.w"].value.shape


def test_freeze_trunk_excludes_trunk_params(fc):
    frozen = model.build_facechannels(fc, mode="freeze-trunk", seed=7)
    names = {p.name for p in frozen.trainable_params()}
    assert not any(n.startswith("conv") or n.startswith("trunk.") for n in names)
    assert any(n.startswith("lstm.") for n in names)
    full = model.build_facechannels(fc, mode="fine-tune", seed=7)
    assert len(full.trainable_params()) == len(full.params)


def test_concat_mode_width(fc):
    graph = model.build_facechannels(fc, mode="fine-tune", seq_mode="concat", seed=8)
    # heads read [lstm state, projected last frame] so they are 200 wide
    assert graph.heads["arousal"].n_in == 200
    clips = np.random.default_rng(9).uniform(0, 1, (2, 10, 120, 120, 3)).astype(np.float32)
    preds = graph.forward_sequence(clips)
    assert preds.arousal.shape == (2, 1)


def test_build_rejects_bad_args(fc):
    with pytest.raises(ValidationError):
        model.build_facechannel(class_count=1)
    with pytest.raises(ValidationError):
        model.build_facechannels(fc, mode="nonsense")
    fcs_graph = model.build_facechannels(fc, mode="fine-tune", seed=1)
    with pytest.raises(ValidationError):
        model.build_facechannels(fcs_graph, mode="fine-tune")


def test_param_names_unique(fc, fcs):
    for graph in (fc, fcs):
        names = [p.name for p in graph.params.values()]
        assert len(names) == len(set(names))


def test_frame_backward_reaches_all_params(fc):
    graph = model.build_facechannel(seed=11)
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 1, (2, 120, 120, 3)).astype(np.float32)
    preds = graph.forward_frame(x, train=True)
    graph.zero_grads()
    graph.backward_frame({
        "arousal": np.ones((2, 1), np.float32),
        "valence": np.ones((2, 1), np.float32),
        "expression": rng.standard_normal((2, 7)).astype(np.float32),
    })
    for p in graph.trainable_params():
        assert np.abs(p.grad).max() > 0, f"no gradient reached {p.name}"


def test_end_to_end_gradient_spot_check(fc):
    """Finite-difference check through the whole frame graph in float64."""
    graph = model.build_facechannel(seed=13)
    rng = np.random.default_rng(13)
    x = rng.uniform(0, 1, (2, 120, 120, 3)).astype(np.float64)
    target_a = rng.uniform(-0.5, 0.5, (2, 1))
    target = target_a.astype(np.float64)

    # promote every parameter to float64 for the check
    for p in graph.params.values():
        p.value = p.value.astype(np.float64)

    def loss():
        preds = graph.forward_frame(x, train=True)
        return ops.mse(preds.arousal, target)

    base = loss()
    graph.zero_grads()
    graph.backward_frame({"arousal": ops.mse_backward(
        graph.forward_frame(x, train=True).arousal, target)})

    p = graph.params["head_arousal.w"]
    rng_idx = np.random.default_rng(17)
    h = 1e-6
    for _ in range(5):
        idx = tuple(rng_idx.integers(0, s) for s in p.value.shape)
        keep = p.value[idx]
        p.value[idx] = keep + h
        up = loss()
        p.value[idx] = keep - h
        down = loss()
        p.value[idx] = keep
        numeric = (up - down) / (2 * h)
        analytic = p.grad[idx]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        assert abs(numeric - analytic) / denom < 1e-4
