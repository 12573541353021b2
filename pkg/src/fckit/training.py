"""Multi-task training: joint MSE + cross-entropy objective with per-task
masking, an adaptive-moment optimizer, seeded shuffling, CSV logging, and
bit-exact checkpoint resume.

Checkpoints are a weights file plus a sidecar ``.opt`` file in the same
record format holding the optimizer moments (names suffixed ``.m1``/``.m2``)
and the step/epoch counters.
"""

import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import datapipe, metrics, ops, weights_io
from .errors import InternalError, ValidationError
from .model import (DEFAULT_SEED, SEQ_LEN, ModelGraph, build_facechannel,
                    build_facechannels)

_SHUFFLE_TAG = 0xFC55
_TASKS = ("arousal", "valence", "expression")


@dataclass(frozen=True)
class TaskMask:
    arousal: bool = True
    valence: bool = True
    expression: bool = True

    def __post_init__(self):
        if not (self.arousal or self.valence or self.expression):
            raise ValidationError("task mask disables every task")

    @classmethod
    def from_names(cls, text):
        names = [t.strip() for t in text.split(",") if t.strip()]
        bad = [t for t in names if t not in _TASKS]
        if bad:
            raise ValidationError(f"unknown tasks: {', '.join(bad)}")
        return cls(**{t: t in names for t in _TASKS})

    def names(self):
        return ",".join(t for t in _TASKS if getattr(self, t))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    epochs: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_arousal: float = 1.0
    weight_valence: float = 1.0
    weight_expression: float = 1.0
    seed: int = DEFAULT_SEED
    tasks: TaskMask = field(default_factory=TaskMask)
    variant: str = "fc"
    freeze_trunk: bool = False
    seq_mode: str = "sequential"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValidationError(f"{name} must lie in [0, 1), got {b}")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be > 0")
        enabled_weights = [
            getattr(self, f"weight_{t}") for t in _TASKS if getattr(self.tasks, t)
        ]
        if min(getattr(self, f"weight_{t}") for t in _TASKS) < 0:
            raise ValidationError("loss weights must be >= 0")
        if max(enabled_weights) <= 0:
            raise ValidationError("all enabled tasks have zero loss weight")
        if self.variant not in ("fc", "fcs"):
            raise ValidationError(f"variant must be fc or fcs, got {self.variant!r}")
        if self.seq_mode not in ("sequential", "concat"):
            raise ValidationError(
                f"seq_mode must be sequential or concat, got {self.seq_mode!r}"
            )

    def weights(self):
        return (self.weight_arousal, self.weight_valence, self.weight_expression)


def _parse_bool(text):
    if text in ("true", "false"):
        return text == "true"
    raise ValidationError(f"expected true or false, got {text!r}")


_CONFIG_PARSERS = {
    "batch_size": int,
    "epochs": int,
    "learning_rate": float,
    "beta1": float,
    "beta2": float,
    "epsilon": float,
    "weight_arousal": float,
    "weight_valence": float,
    "weight_expression": float,
    "seed": int,
    "tasks": TaskMask.from_names,
    "variant": str,
    "freeze_trunk": _parse_bool,
    "seq_mode": str,
}


def parse_config_file(path):
    """Read `key = value` lines; `#` starts a comment."""
    values = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path} line {line_no}: expected key = value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _CONFIG_PARSERS:
                raise ValidationError(f"{path} line {line_no}: unknown key {key!r}")
            if key in values:
                raise ValidationError(f"{path} line {line_no}: duplicate key {key!r}")
            values[key] = value
    return values


def build_config(file_values=None, overrides=None):
    """Merge config-file values with overrides; overrides win."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    kwargs = {}
    for key, value in merged.items():
        if key not in _CONFIG_PARSERS:
            raise ValidationError(f"unknown config key {key!r}")
        try:
            kwargs[key] = (
                value if not isinstance(value, str) else _CONFIG_PARSERS[key](value)
            )
        except ValidationError:
            raise
        except ValueError:
            raise ValidationError(f"bad value for {key}: {value!r}") from None
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# loss

@dataclass(frozen=True)
class JointLoss:
    total: float
    arousal: float
    valence: float
    expression: float
    empty_tasks: tuple = ()


@dataclass(frozen=True)
class Batch:
    """Targets for one mini-batch; expression -1 marks unlabeled rows."""

    arousal: np.ndarray
    valence: np.ndarray
    expression: np.ndarray

    @property
    def expression_mask(self):
        return (self.expression >= 0).astype(np.float32)


def batch_targets(samples):
    return Batch(
        arousal=np.array([[s.arousal] for s in samples], dtype=np.float32),
        valence=np.array([[s.valence] for s in samples], dtype=np.float32),
        expression=np.array(
            [-1 if s.expression is None else s.expression for s in samples],
            dtype=np.int64,
        ),
    )


def joint_loss(preds, targets, mask=None, weights=(1.0, 1.0, 1.0)):
    """Weighted sum of the enabled per-task losses.

    An enabled task whose batch holds no labeled sample contributes 0 and is
    reported in ``empty_tasks``.
    """
    mask = mask or TaskMask()
    w_a, w_v, w_e = weights
    parts = {"arousal": 0.0, "valence": 0.0, "expression": 0.0}
    empty = []
    if mask.arousal:
        parts["arousal"] = ops.mse(preds.arousal, targets.arousal)
    if mask.valence:
        parts["valence"] = ops.mse(preds.valence, targets.valence)
    if mask.expression:
        m = targets.expression_mask
        if m.sum() == 0:
            empty.append("expression")
        else:
            parts["expression"] = ops.cross_entropy(
                preds.expression, np.maximum(targets.expression, 0), mask=m
            )
    total = (
        (w_a * parts["arousal"] if mask.arousal else 0.0)
        + (w_v * parts["valence"] if mask.valence else 0.0)
        + (w_e * parts["expression"] if mask.expression else 0.0)
    )
    return JointLoss(
        total=float(total),
        arousal=parts["arousal"],
        valence=parts["valence"],
        expression=parts["expression"],
        empty_tasks=tuple(empty),
    )


def loss_grads(preds, targets, mask=None, weights=(1.0, 1.0, 1.0)):
    """Gradients of joint_loss with respect to each enabled head output."""
    mask = mask or TaskMask()
    w_a, w_v, w_e = weights
    grads = {}
    if mask.arousal:
        grads["arousal"] = np.float32(w_a) * ops.mse_backward(
            preds.arousal, targets.arousal
        )
    if mask.valence:
        grads["valence"] = np.float32(w_v) * ops.mse_backward(
            preds.valence, targets.valence
        )
    if mask.expression:
        m = targets.expression_mask
        if m.sum() > 0:
            grads["expression"] = np.float32(w_e) * ops.cross_entropy_backward(
                preds.expression, np.maximum(targets.expression, 0), mask=m
            )
    return grads


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    t: int = 0
    m1: dict = field(default_factory=dict)
    m2: dict = field(default_factory=dict)


def optimizer_step(params, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Adaptive-moment update, in place, with bias correction.

    A non-finite gradient aborts the whole step before any parameter moves.
    """
    for p in params:
        if not np.isfinite(p.grad).all():
            raise InternalError(f"non-finite gradient in {p.name}")
    state.t += 1
    b1 = np.float32(beta1)
    b2 = np.float32(beta2)
    c1 = np.float32(1.0 - beta1 ** state.t)
    c2 = np.float32(1.0 - beta2 ** state.t)
    step = np.float32(lr)
    eps = np.float32(eps)
    for p in params:
        g = p.grad
        m1 = state.m1.get(p.name)
        if m1 is None:
            m1 = state.m1[p.name] = np.zeros_like(p.value)
        m2 = state.m2.get(p.name)
        if m2 is None:
            m2 = state.m2[p.name] = np.zeros_like(p.value)
        m1 *= b1
        m1 += (1 - b1) * g
        m2 *= b2
        m2 += (1 - b2) * (g * g)
        p.value -= step * (m1 / c1) / (np.sqrt(m2 / c2) + eps)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(graph, state, epoch, path):
    weights_io.save_weights(graph, path)
    records = {"adam.t": np.array([state.t], dtype=np.float32),
               "epoch": np.array([epoch], dtype=np.float32)}
    for name, m1 in state.m1.items():
        records[f"{name}.m1"] = m1
        records[f"{name}.m2"] = state.m2[name]
    weights_io.write_records(path + ".opt", records)


def load_checkpoint(graph, state, path):
    """Restore weights and optimizer moments; returns the stored epoch."""
    weights_io.load_weights(graph, path)
    records = weights_io.read_records(path + ".opt")
    state.t = int(records.pop("adam.t")[0])
    epoch = int(records.pop("epoch")[0])
    state.m1.clear()
    state.m2.clear()
    for name, value in records.items():
        if name.endswith(".m1"):
            state.m1[name[:-3]] = value
        elif name.endswith(".m2"):
            state.m2[name[:-3]] = value
        else:
            raise InternalError(f"unexpected optimizer record {name!r}")
    return epoch


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    epochs_run: int
    final_loss: float
    best_val_loss: float | None
    log_path: str
    last_path: str
    best_path: str | None


def _epoch_order(seed, epoch, n):
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((_SHUFFLE_TAG, seed, epoch))))
    return rng.permutation(n)


def _load_inputs(items, cache, sequence):
    if sequence:
        return np.stack([
            np.stack([datapipe.load_sample(s, cache) for s in clip.samples])
            for clip in items
        ])
    return np.stack([datapipe.load_sample(s, cache) for s in items])


def _labels_of(items, sequence):
    return batch_targets([c.label for c in items] if sequence else items)


def build_graph(config, base_weights=None):
    """Construct the model a config asks for; fcs requires a base checkpoint."""
    if config.variant == "fc":
        return build_facechannel(seed=config.seed)
    if base_weights is None:
        raise ValidationError("fcs training requires a base weights file")
    base = weights_io.graph_from_weights(base_weights)
    if base.variant != "fc":
        raise ValidationError(f"{base_weights}: base weights are not an fc model")
    return build_facechannels(
        base,
        mode="freeze-trunk" if config.freeze_trunk else "fine-tune",
        seq_mode=config.seq_mode,
        seed=config.seed,
    )


def train(config, train_items, val_items=None, out_dir=".", base_weights=None,
          resume_from=None, cache=None, log_name="train_log.csv"):
    """Epoch loop over seeded shuffles of ``train_items``.

    ``train_items`` is a Sample list for fc and a Clip list for fcs.  Writes
    a CSV log plus a ``last`` checkpoint each epoch, and a ``best``
    checkpoint whenever the validation loss improves.
    """
    if not train_items:
        raise ValidationError("training set is empty")
    sequence = config.variant == "fcs"
    for item in train_items:
        if sequence and not isinstance(item, datapipe.Clip):
            raise ValidationError("fcs training expects 10-frame clips")
        if not sequence and isinstance(item, datapipe.Clip):
            raise ValidationError("fc training expects single-frame samples")

    graph = build_graph(config, base_weights)
    state = AdamState()
    start_epoch = 0
    os.makedirs(out_dir, exist_ok=True)
    last_path = os.path.join(out_dir, "last.fcw")
    best_path = os.path.join(out_dir, "best.fcw")
    log_path = os.path.join(out_dir, log_name)
    if resume_from is not None:
        start_epoch = load_checkpoint(graph, state, resume_from)
    if cache is None:
        cache = {}

    params = graph.trainable_params()
    n = len(train_items)
    mask, weights = config.tasks, config.weights()
    best_val = None
    wrote_best = False
    final_loss = float("nan")
    log_mode = "a" if resume_from is not None and os.path.exists(log_path) else "w"
    with open(log_path, log_mode) as log:
        if log_mode == "w":
            log.write("epoch,step,loss,loss_arousal,loss_valence,loss_expression\n")
        for epoch in range(start_epoch, config.epochs):
            order = _epoch_order(config.seed, epoch, n)
            epoch_losses = []
            for step, lo in enumerate(range(0, n, config.batch_size)):
                chunk = [train_items[i] for i in order[lo:lo + config.batch_size]]
                x = _load_inputs(chunk, cache, sequence)
                targets = _labels_of(chunk, sequence)
                if sequence:
                    preds = graph.forward_sequence(x, train=True)
                else:
                    preds = graph.forward_frame(x, train=True)
                loss = joint_loss(preds, targets, mask, weights)
                grads = loss_grads(preds, targets, mask, weights)
                graph.zero_grads()
                if sequence:
                    graph.backward_sequence(grads)
                else:
                    graph.backward_frame(grads)
                optimizer_step(params, state, lr=config.learning_rate,
                               beta1=config.beta1, beta2=config.beta2,
                               eps=config.epsilon)
                epoch_losses.append(loss.total)
                log.write(
                    f"{epoch},{step},{loss.total:.6f},{loss.arousal:.6f},"
                    f"{loss.valence:.6f},{loss.expression:.6f}\n"
                )
            final_loss = float(np.mean(epoch_losses))
            save_checkpoint(graph, state, epoch + 1, last_path)
            if val_items:
                val_loss = validation_loss(graph, config, val_items, cache)
                if best_val is None or val_loss < best_val:
                    best_val = val_loss
                    save_checkpoint(graph, state, epoch + 1, best_path)
                    wrote_best = True
    return TrainResult(
        epochs_run=config.epochs - start_epoch,
        final_loss=final_loss,
        best_val_loss=best_val,
        log_path=log_path,
        last_path=last_path,
        best_path=best_path if wrote_best else None,
    )


def validation_loss(graph, config, items, cache=None, batch_size=32):
    sequence = config.variant == "fcs"
    if cache is None:
        cache = {}
    total, count = 0.0, 0
    for lo in range(0, len(items), batch_size):
        chunk = items[lo:lo + batch_size]
        x = _load_inputs(chunk, cache, sequence)
        preds = (graph.forward_sequence(x) if sequence
                 else graph.forward_frame(x))
        loss = joint_loss(preds, _labels_of(chunk, sequence),
                          config.tasks, config.weights())
        total += loss.total * len(chunk)
        count += len(chunk)
    return total / count


def evaluate(graph, items, cache=None, batch_size=32, f1_average="macro"):
    """Forward the evaluation set and score it.

    Dimensional metrics cover every item; categorical metrics cover the
    expression-labeled subset.
    """
    if not items:
        raise ValidationError("evaluation set is empty")
    sequence = graph.variant == "fcs"
    if cache is None:
        cache = {}
    pa, pv, pc = [], [], []
    for lo in range(0, len(items), batch_size):
        chunk = items[lo:lo + batch_size]
        x = _load_inputs(chunk, cache, sequence)
        preds = (graph.forward_sequence(x) if sequence
                 else graph.forward_frame(x))
        pa.append(preds.arousal[:, 0])
        pv.append(preds.valence[:, 0])
        pc.append(preds.expression.argmax(axis=1))
    pa = np.concatenate(pa)
    pv = np.concatenate(pv)
    pc = np.concatenate(pc)
    labels = [item.label if sequence else item for item in items]
    ga = np.array([s.arousal for s in labels])
    gv = np.array([s.valence for s in labels])
    gc = np.array([-1 if s.expression is None else s.expression for s in labels])
    labeled = gc >= 0
    if not labeled.any():
        raise ValidationError("evaluation set has no expression labels")
    k = graph.class_count
    score, conf = metrics.f1_macro(pc[labeled], gc[labeled], k, average=f1_average)
    return metrics.MetricsReport(
        ccc_arousal=metrics.ccc(pa, ga),
        ccc_valence=metrics.ccc(pv, gv),
        accuracy=metrics.accuracy(pc[labeled], gc[labeled]),
        f1=score,
        confusion=conf,
        n=int(labeled.sum()),
    )
