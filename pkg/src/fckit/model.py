"""Frame (FC) and sequence (FC-S) affect networks.

The frame network is a VGG-style trunk: four conv blocks with channel plan
[16,16 | 32,32 | 64,64,64 | 80,80,80] (10 conv layers, ReLU each, 4 max
pools), flatten (7*7*80 = 3920), a 500-unit ReLU dense layer, then three
heads: arousal (tanh, 1), valence (tanh, 1), expression (softmax, K).

The sequence network reuses a trained trunk framewise over 10-frame clips
and adds an LSTM with 100 units plus a 100-unit ReLU dense layer before
fresh heads.  Two wirings exist: "sequential" (trunk -> LSTM -> dense ->
heads, the default) and "concat" (LSTM output and the dense projection of
the last frame's trunk features concatenated into the heads).

Weights initialize fan-in-scaled uniform (limit sqrt(6/fan_in)), biases
zero, LSTM forget-gate bias 1.0.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ShapeError, ValidationError

INPUT_SIZE = 120
SEQ_LEN = 10
TRUNK_UNITS = 500
LSTM_UNITS = 100
SEQ_DENSE_UNITS = 100
CHANNEL_PLAN = ((16, 16), (32, 32), (64, 64, 64), (80, 80, 80))
FLAT_FEATURES = 7 * 7 * CHANNEL_PLAN[-1][-1]  # 120 -> 60 -> 30 -> 15 -> 7

CLASS_NAMES = (
    "Neutral",
    "Anger",
    "Disgust",
    "Fear",
    "Happiness",
    "Sadness",
    "Surprise",
)

DEFAULT_SEED = 2020
_INIT_TAG = 0xFC01


@dataclass
class ParamTensor:
    """Named trainable tensor with its gradient accumulator."""

    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0


@dataclass
class PredictionTriple:
    arousal: float
    valence: float
    class_distribution: np.ndarray


@dataclass
class PredictionBatch:
    """Per-batch head outputs: arousal (B,1), valence (B,1), expression (B,K)."""

    arousal: np.ndarray
    valence: np.ndarray
    expression: np.ndarray

    def __len__(self):
        return self.arousal.shape[0]

    def triple(self, i: int) -> PredictionTriple:
        return PredictionTriple(
            arousal=float(self.arousal[i, 0]),
            valence=float(self.valence[i, 0]),
            class_distribution=self.expression[i],
        )


def _uniform_init(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class ConvLayer:
    """3x3 same-padding convolution followed by ReLU."""

    def __init__(self, name, cin, cout, rng):
        self.name = name
        self.cin, self.cout = cin, cout
        self.w = ParamTensor(f"{name}.w", _uniform_init(rng, (3, 3, cin, cout), 9 * cin))
        self.b = ParamTensor(f"{name}.b", np.zeros(cout, dtype=np.float32))
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train=False):
        y, conv_cache = ops.conv2d_forward(x, self.w.value, self.b.value)
        np.maximum(y, 0, out=y)
        if train:
            self._cache = (conv_cache, y > 0)
        return y

    def backward(self, gy):
        conv_cache, mask = self._cache
        gx, gw, gb = ops.conv2d_backward(conv_cache, gy * mask)
        self.w.grad += gw
        self.b.grad += gb
        return gx


class PoolLayer:
    def __init__(self, name):
        self.name = name
        self._cache = None

    def params(self):
        return []

    def forward(self, x, train=False):
        if train:
            y, self._cache = ops.maxpool2_forward(x)
            return y
        return ops.maxpool2(x)

    def backward(self, gy):
        return ops.maxpool2_backward(self._cache, gy)


class FlattenLayer:
    def __init__(self, name):
        self.name = name
        self._shape = None

    def params(self):
        return []

    def forward(self, x, train=False):
        self._shape = x.shape
        return np.ascontiguousarray(x).reshape(x.shape[0], -1)

    def backward(self, gy):
        return gy.reshape(self._shape)


class DenseLayer:
    """Dense layer with an optional activation: relu, tanh, softmax, or none."""

    def __init__(self, name, n_in, n_out, activation, rng):
        self.name = name
        self.n_in, self.n_out = n_in, n_out
        self.activation = activation
        self.w = ParamTensor(f"{name}.w", _uniform_init(rng, (n_in, n_out), n_in))
        self.b = ParamTensor(f"{name}.b", np.zeros(n_out, dtype=np.float32))
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train=False):
        y, x_cache = ops.dense_forward(x, self.w.value, self.b.value)
        act_cache = None
        if self.activation == "relu":
            y, act_cache = ops.relu_forward(y)
        elif self.activation == "tanh":
            y, act_cache = ops.tanh_forward(y)
        elif self.activation == "softmax":
            y, act_cache = ops.softmax_forward(y)
        if train:
            self._cache = (x_cache, act_cache)
        return y

    def backward(self, gy):
        x_cache, act_cache = self._cache
        if self.activation == "relu":
            gy = ops.relu_backward(act_cache, gy)
        elif self.activation == "tanh":
            gy = ops.tanh_backward(act_cache, gy)
        elif self.activation == "softmax":
            gy = ops.softmax_backward(act_cache, gy)
        gx, gw, gb = ops.dense_backward(x_cache, self.w.value, gy)
        self.w.grad += gw
        self.b.grad += gb
        return gx


class LstmLayer:
    """LSTM scanned over a (B,T,N) sequence from zero state; emits last h."""

    def __init__(self, name, n_in, units, rng):
        self.name = name
        self.n_in, self.units = n_in, units
        fan_in = n_in + units
        self._wp, self._bp = {}, {}
        for gate in ("i", "f", "g", "o"):
            self._wp[gate] = ParamTensor(
                f"{name}.w{gate}", _uniform_init(rng, (fan_in, units), fan_in)
            )
            bias = np.zeros(units, dtype=np.float32)
            if gate == "f":
                bias[:] = 1.0  # open forget gate at init
            self._bp[gate] = ParamTensor(f"{name}.b{gate}", bias)
        self._caches = None

    def params(self):
        return [self._wp[g] for g in "ifgo"] + [self._bp[g] for g in "ifgo"]

    def gates(self) -> ops.LstmGates:
        return ops.LstmGates(
            wi=self._wp["i"].value,
            wf=self._wp["f"].value,
            wg=self._wp["g"].value,
            wo=self._wp["o"].value,
            bi=self._bp["i"].value,
            bf=self._bp["f"].value,
            bg=self._bp["g"].value,
            bo=self._bp["o"].value,
        )

    def forward(self, xseq, train=False):
        batch, steps, _ = xseq.shape
        h = np.zeros((batch, self.units), dtype=xseq.dtype)
        c = np.zeros_like(h)
        p = self.gates()
        caches = []
        for t in range(steps):
            h, c, cache = ops.lstm_step_forward(xseq[:, t, :], h, c, p)
            if train:
                caches.append(cache)
        self._caches = caches if train else None
        return h

    def backward(self, gh_last):
        p = self.gates()
        steps = len(self._caches)
        gh = gh_last
        gc = np.zeros_like(gh_last)
        gxseq = np.empty(
            (gh_last.shape[0], steps, self.n_in), dtype=gh_last.dtype
        )
        for t in range(steps - 1, -1, -1):
            gx, gh, gc, gp = ops.lstm_step_backward(self._caches[t], p, gh, gc)
            gxseq[:, t, :] = gx
            for gate in "ifgo":
                self._wp[gate].grad += getattr(gp, f"w{gate}")
                self._bp[gate].grad += getattr(gp, f"b{gate}")
        return gxseq


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------

HEAD_NAMES = ("arousal", "valence", "expression")


@dataclass
class ModelGraph:
    variant: str  # "fc" | "fcs"
    class_count: int
    trunk: list
    heads: dict
    lstm: LstmLayer = None
    seq_dense: DenseLayer = None
    seq_mode: str = "sequential"
    freeze_trunk: bool = False
    params: dict = field(default_factory=dict)

    def _register(self):
        self.params = {}
        for layer in self._all_layers():
            for p in layer.params():
                if p.name in self.params:
                    raise ValidationError(f"duplicate parameter name {p.name}")
                self.params[p.name] = p

    def _all_layers(self):
        layers = list(self.trunk)
        if self.lstm is not None:
            layers.append(self.lstm)
        if self.seq_dense is not None:
            layers.append(self.seq_dense)
        layers.extend(self.heads[h] for h in HEAD_NAMES)
        return layers

    def _trunk_param_names(self):
        names = set()
        for layer in self.trunk:
            names.update(p.name for p in layer.params())
        return names

    def trainable_params(self):
        if self.variant == "fcs" and self.freeze_trunk:
            frozen = self._trunk_param_names()
            return [p for n, p in self.params.items() if n not in frozen]
        return list(self.params.values())

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    def count_params(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def conv_layer_count(self) -> int:
        return sum(1 for l in self.trunk if isinstance(l, ConvLayer))

    def pool_layer_count(self) -> int:
        return sum(1 for l in self.trunk if isinstance(l, PoolLayer))

    def trunk_width(self) -> int:
        return self.trunk[-1].n_out

    def layer_table(self):
        """(name, kind, detail, param count) rows for inspection output."""
        rows = []
        for layer in self._all_layers():
            kind = type(layer).__name__.replace("Layer", "").lower()
            if isinstance(layer, ConvLayer):
                detail = f"3x3 {layer.cin}->{layer.cout} relu"
            elif isinstance(layer, DenseLayer):
                act = layer.activation or "linear"
                detail = f"{layer.n_in}->{layer.n_out} {act}"
            elif isinstance(layer, LstmLayer):
                detail = f"{layer.n_in}->{layer.units}"
            elif isinstance(layer, PoolLayer):
                detail = "2x2 stride 2"
            else:
                detail = ""
            rows.append((layer.name, kind, detail, sum(p.value.size for p in layer.params())))
        return rows

    # -- forward / backward -------------------------------------------------

    def _check_frame_batch(self, batch):
        if batch.ndim != 4 or batch.shape[1:] != (INPUT_SIZE, INPUT_SIZE, 3):
            raise ShapeError(
                f"frame batch must be (B,{INPUT_SIZE},{INPUT_SIZE},3), got {batch.shape}"
            )

    def _trunk_forward(self, x, train):
        for layer in self.trunk:
            x = layer.forward(x, train=train)
        return x

    def _trunk_backward(self, gfeat):
        g = gfeat
        for layer in reversed(self.trunk):
            g = layer.backward(g)
        return g

    def _heads_forward(self, feat, train):
        return PredictionBatch(
            arousal=self.heads["arousal"].forward(feat, train=train),
            valence=self.heads["valence"].forward(feat, train=train),
            expression=self.heads["expression"].forward(feat, train=train),
        )

    def _heads_backward(self, head_grads):
        gfeat = None
        for name in HEAD_NAMES:
            gy = head_grads.get(name)
            if gy is None:
                continue
            g = self.heads[name].backward(gy)
            gfeat = g if gfeat is None else gfeat + g
        if gfeat is None:
            raise ValidationError("backward needs at least one head gradient")
        return gfeat

    def forward_frame(self, batch, train=False) -> PredictionBatch:
        if self.variant != "fc":
            raise ValidationError("forward_frame needs a frame-variant graph")
        self._check_frame_batch(batch)
        feat = self._trunk_forward(batch, train)
        return self._heads_forward(feat, train)

    def backward_frame(self, head_grads):
        """Accumulate gradients after a train-mode forward_frame.

        head_grads maps head name -> upstream gradient; omitted heads (masked
        tasks) receive no gradient at all.
        """
        self._trunk_backward(self._heads_backward(head_grads))

    def forward_sequence(self, clips, train=False) -> PredictionBatch:
        if self.variant != "fcs":
            raise ValidationError("forward_sequence needs a sequence-variant graph")
        if clips.ndim != 5 or clips.shape[1] != SEQ_LEN:
            raise ShapeError(
                f"clips must be (B,{SEQ_LEN},{INPUT_SIZE},{INPUT_SIZE},3), got {clips.shape}"
            )
        if clips.shape[2:] != (INPUT_SIZE, INPUT_SIZE, 3):
            raise ShapeError(f"clip frames must be {INPUT_SIZE}x{INPUT_SIZE}x3, got {clips.shape}")
        batch = clips.shape[0]
        trunk_train = train and not self.freeze_trunk
        frames = np.ascontiguousarray(clips).reshape((batch * SEQ_LEN,) + clips.shape[2:])
        feat = self._trunk_forward(frames, trunk_train)
        feat_seq = feat.reshape(batch, SEQ_LEN, -1)
        h_last = self.lstm.forward(feat_seq, train=train)
        if self.seq_mode == "sequential":
            seq_feat = self.seq_dense.forward(h_last, train=train)
        else:  # concat: LSTM output alongside a projection of the last frame
            proj = self.seq_dense.forward(feat_seq[:, -1, :], train=train)
            seq_feat = np.concatenate([h_last, proj], axis=1)
        self._seq_batch = batch
        return self._heads_forward(seq_feat, train)

    def backward_sequence(self, head_grads):
        g = self._heads_backward(head_grads)
        if self.seq_mode == "sequential":
            gh_last = self.seq_dense.backward(g)
            gfeat_seq = self.lstm.backward(gh_last)
        else:
            units = self.lstm.units
            gh_last, gproj = g[:, :units], g[:, units:]
            gfeat_seq = self.lstm.backward(gh_last)
            gfeat_seq[:, -1, :] += self.seq_dense.backward(gproj)
        if not self.freeze_trunk:
            batch = self._seq_batch
            self._trunk_backward(
                np.ascontiguousarray(gfeat_seq).reshape(batch * SEQ_LEN, -1)
            )


def _build_trunk(rng):
    layers = []
    cin = 3
    conv_idx = 0
    for block_idx, block in enumerate(CHANNEL_PLAN, start=1):
        for cout in block:
            conv_idx += 1
            layers.append(ConvLayer(f"conv{conv_idx}", cin, cout, rng))
            cin = cout
        layers.append(PoolLayer(f"pool{block_idx}"))
    layers.append(FlattenLayer("flatten"))
    layers.append(DenseLayer("trunk", FLAT_FEATURES, TRUNK_UNITS, "relu", rng))
    return layers


def _build_heads(rng, n_in, class_count):
    return {
        "arousal": DenseLayer("head_arousal", n_in, 1, "tanh", rng),
        "valence": DenseLayer("head_valence", n_in, 1, "tanh", rng),
        "expression": DenseLayer("head_expression", n_in, class_count, "softmax", rng),
    }


def _init_rng(seed):
    return np.random.default_rng(np.random.SeedSequence((_INIT_TAG, seed)))


def build_facechannel(class_count=7, seed=DEFAULT_SEED) -> ModelGraph:
    """Assemble the frame network with freshly initialized weights."""
    if class_count < 2:
        raise ValidationError(f"class_count must be >= 2, got {class_count}")
    rng = _init_rng(seed)
    trunk = _build_trunk(rng)
    heads = _build_heads(rng, TRUNK_UNITS, class_count)
    graph = ModelGraph(variant="fc", class_count=class_count, trunk=trunk, heads=heads)
    graph._register()
    return graph


def build_facechannels(
    base: ModelGraph,
    mode="fine-tune",
    seq_mode="sequential",
    seed=DEFAULT_SEED,
) -> ModelGraph:
    """Extend a trained frame network into the sequence network.

    Trunk weights are copied from ``base``; the LSTM, sequence dense layer,
    and heads start fresh.  ``mode`` is "fine-tune" (trunk keeps training)
    or "freeze-trunk" (trunk excluded from optimization).
    """
    if base.variant != "fc":
        raise ValidationError("base graph must be the frame variant")
    if mode not in ("fine-tune", "freeze-trunk"):
        raise ValidationError(f"unknown mode {mode!r}")
    if seq_mode not in ("sequential", "concat"):
        raise ValidationError(f"unknown seq_mode {seq_mode!r}")
    rng = _init_rng(seed)
    trunk = _build_trunk(rng)
    lstm = LstmLayer("lstm", TRUNK_UNITS, LSTM_UNITS, rng)
    if seq_mode == "sequential":
        seq_dense = DenseLayer("seq_dense", LSTM_UNITS, SEQ_DENSE_UNITS, "relu", rng)
        head_in = SEQ_DENSE_UNITS
    else:
        seq_dense = DenseLayer("seq_dense", TRUNK_UNITS, SEQ_DENSE_UNITS, "relu", rng)
        head_in = LSTM_UNITS + SEQ_DENSE_UNITS
    heads = _build_heads(rng, head_in, base.class_count)
    graph = ModelGraph(
        variant="fcs",
        class_count=base.class_count,
        trunk=trunk,
        heads=heads,
        lstm=lstm,
        seq_dense=seq_dense,
        seq_mode=seq_mode,
        freeze_trunk=(mode == "freeze-trunk"),
    )
    graph._register()
    for layer in graph.trunk:
        for p in layer.params():
            p.value[...] = base.params[p.name].value
    return graph


def count_params(graph: ModelGraph) -> int:
    return graph.count_params()
