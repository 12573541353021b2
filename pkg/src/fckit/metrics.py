"""Evaluation measures: concordance and Pearson correlation for the
dimensional outputs, accuracy and macro F1 with a confusion matrix for the
categorical output.

All statistics use population (1/N) moments and are accumulated in float64
regardless of the input dtype.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def _paired(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValidationError(
            f"paired series length mismatch: {x.size} vs {y.size}"
        )
    if x.size < 2:
        raise ValidationError("paired series need at least 2 points")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValidationError("paired series contain non-finite values")
    return x, y


@dataclass(frozen=True)
class MomentSet:
    """Population moments of a paired series."""

    mean_x: float
    mean_y: float
    var_x: float
    var_y: float
    cov: float

    @property
    def degenerate(self):
        """True when either series has zero variance."""
        return self.var_x == 0.0 or self.var_y == 0.0

    @property
    def pearson(self):
        if self.degenerate:
            return 0.0
        return self.cov / np.sqrt(self.var_x * self.var_y)


def moments(x, y):
    """One-pass moment accumulation over a paired series."""
    x, y = _paired(x, y)
    n = x.size
    sx = float(x.sum())
    sy = float(y.sum())
    sxx = float((x * x).sum())
    syy = float((y * y).sum())
    sxy = float((x * y).sum())
    mx, my = sx / n, sy / n
    # raw-moment form; clip tiny negative rounding residue
    var_x = max(sxx / n - mx * mx, 0.0)
    var_y = max(syy / n - my * my, 0.0)
    cov = sxy / n - mx * my
    return MomentSet(mx, my, var_x, var_y, cov)


def pearson(x, y):
    """Linear correlation; 0.0 when either series is constant."""
    return float(moments(x, y).pearson)


def ccc(x, y):
    """Concordance: 2*cov / (var_x + var_y + (mean_x - mean_y)^2).

    The covariance form avoids 0 * undefined when one variance vanishes.
    A zero denominator only happens for two identical constant series,
    which are in perfect agreement, hence 1.0.
    """
    m = moments(x, y)
    denom = m.var_x + m.var_y + (m.mean_x - m.mean_y) ** 2
    if denom == 0.0:
        return 1.0
    return float(2.0 * m.cov / denom)


def _classes(pred, gold, k=None):
    pred = np.asarray(pred, dtype=np.int64).ravel()
    gold = np.asarray(gold, dtype=np.int64).ravel()
    if pred.shape != gold.shape:
        raise ValidationError(
            f"class series length mismatch: {pred.size} vs {gold.size}"
        )
    if pred.size == 0:
        raise ValidationError("class series are empty")
    if k is not None:
        for name, arr in (("pred", pred), ("gold", gold)):
            if arr.min() < 0 or arr.max() >= k:
                raise ValidationError(
                    f"{name} classes outside [0, {k}): "
                    f"saw {int(arr.min())}..{int(arr.max())}"
                )
    return pred, gold


def accuracy(pred, gold):
    """Fraction of exact class matches."""
    pred, gold = _classes(pred, gold)
    return float((pred == gold).mean())


def confusion_matrix(pred, gold, k):
    """K x K counts, rows = gold class, columns = predicted class."""
    pred, gold = _classes(pred, gold, k)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (gold, pred), 1)
    return counts


def f1_macro(pred, gold, k, average="macro"):
    """Per-class F1 averaged over classes, plus the confusion matrix.

    Classes absent from both gold and pred are excluded from the mean.
    average="weighted" weighs each class by its gold support instead.
    """
    if average not in ("macro", "weighted"):
        raise ValidationError(f"unknown F1 average: {average!r}")
    conf = confusion_matrix(pred, gold, k)
    tp = np.diag(conf).astype(np.float64)
    gold_count = conf.sum(axis=1).astype(np.float64)
    pred_count = conf.sum(axis=0).astype(np.float64)
    present = (gold_count + pred_count) > 0
    if not present.any():
        raise ValidationError("no classes present")
    prec = np.divide(tp, pred_count, out=np.zeros(k), where=pred_count > 0)
    rec = np.divide(tp, gold_count, out=np.zeros(k), where=gold_count > 0)
    pr = prec + rec
    f1 = np.divide(2.0 * prec * rec, pr, out=np.zeros(k), where=pr > 0)
    if average == "weighted":
        total = gold_count.sum()
        score = float((f1 * gold_count).sum() / total) if total else 0.0
    else:
        score = float(f1[present].mean())
    return score, conf


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation summary over one labeled set."""

    ccc_arousal: float
    ccc_valence: float
    accuracy: float
    f1: float
    confusion: np.ndarray
    n: int

    def table_row(self):
        """Columns: Arousal, Valence, F1-Score, Accuracy."""
        return ",".join(
            f"{v:.4f}"
            for v in (self.ccc_arousal, self.ccc_valence, self.f1, self.accuracy)
        )

    def metrics_csv(self):
        lines = ["metric,value"]
        for name, value in (
            ("ccc_arousal", self.ccc_arousal),
            ("ccc_valence", self.ccc_valence),
            ("f1_macro", self.f1),
            ("accuracy", self.accuracy),
            ("n", self.n),
        ):
            lines.append(f"{name},{value:.6f}" if isinstance(value, float) else f"{name},{value}")
        return "\n".join(lines) + "\n"

    def confusion_csv(self):
        return "\n".join(",".join(str(int(c)) for c in row) for row in self.confusion) + "\n"


def build_report(pred_arousal, gold_arousal, pred_valence, gold_valence,
                 pred_class, gold_class, k):
    pred_class, gold_class = _classes(pred_class, gold_class, k)
    score, conf = f1_macro(pred_class, gold_class, k)
    return MetricsReport(
        ccc_arousal=ccc(pred_arousal, gold_arousal),
        ccc_valence=ccc(pred_valence, gold_valence),
        accuracy=accuracy(pred_class, gold_class),
        f1=score,
        confusion=conf,
        n=int(pred_class.size),
    )
