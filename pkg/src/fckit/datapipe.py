"""Data pipeline: manifest parsing, label-coherence filtering, oversampling
with augmentation, 10-frame windowing, and image decoding.

Manifests are CSV with header `path,video,frame,valence,arousal,expression`
plus an optional trailing `augment` column holding a serialized augmentation
recipe (present on oversampled duplicates).  Images are binary PPM (P6,
maxval 255, 120x120) or raw `.f32` files of 120*120*3 little-endian floats
in [0, 1].
"""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataFormatError, ValidationError
from .model import CLASS_NAMES, INPUT_SIZE

_MANIFEST_COLUMNS = ("path", "video", "frame", "valence", "arousal", "expression")
_NEUTRAL = CLASS_NAMES.index("Neutral")
_HAPPINESS = CLASS_NAMES.index("Happiness")
_SADNESS = CLASS_NAMES.index("Sadness")
_BIN_COUNT = 21
_CROP_SIZE = 108
_RECIPE_TAG = 0xFCDA


@dataclass(frozen=True)
class Sample:
    """One labeled face crop; expression None means unlabeled."""

    path: str
    video: str
    frame: int
    valence: float
    arousal: float
    expression: int | None = None
    augment: str | None = None


@dataclass(frozen=True)
class FilterReport:
    input_count: int
    kept: int
    invalid_range: int
    happy_negative: int
    sad_positive: int
    neutral_extreme: int

    @property
    def removed(self):
        return (self.invalid_range + self.happy_negative
                + self.sad_positive + self.neutral_extreme)

    def text(self):
        lines = [
            f"input samples      {self.input_count}",
            f"kept               {self.kept}",
            f"invalid range      {self.invalid_range}",
            f"happy w/ negative  {self.happy_negative}",
            f"sad w/ positive    {self.sad_positive}",
            f"neutral extreme    {self.neutral_extreme}",
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Clip:
    """10 consecutive frames of one video; labels come from the last frame."""

    samples: tuple

    @property
    def video(self):
        return self.samples[0].video

    @property
    def label(self):
        return self.samples[-1]


# ---------------------------------------------------------------------------
# manifest

def _parse_float(text, line_no, column):
    try:
        v = float(text)
    except ValueError:
        raise DataFormatError(
            f"line {line_no}: bad {column} value {text!r}"
        ) from None
    if not math.isfinite(v):
        raise DataFormatError(f"line {line_no}: non-finite {column} value")
    return v


def parse_manifest(path):
    """Read a manifest CSV into Samples, preserving file order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty manifest") from None
        header = tuple(h.strip() for h in header)
        has_augment = header == _MANIFEST_COLUMNS + ("augment",)
        if not has_augment and header != _MANIFEST_COLUMNS:
            missing = [c for c in _MANIFEST_COLUMNS if c not in header]
            raise DataFormatError(
                f"{path}: bad manifest header {header}, missing {missing}"
            )
        samples = []
        seen = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            want = 7 if has_augment else 6
            if len(row) != want:
                raise DataFormatError(
                    f"line {line_no}: expected {want} columns, got {len(row)}"
                )
            path_col, video, frame_s, val_s, aro_s, expr_s = row[:6]
            try:
                frame = int(frame_s)
            except ValueError:
                raise DataFormatError(
                    f"line {line_no}: bad frame value {frame_s!r}"
                ) from None
            if frame < 0:
                raise DataFormatError(f"line {line_no}: negative frame index")
            expr_s = expr_s.strip()
            if expr_s:
                try:
                    expression = int(expr_s)
                except ValueError:
                    raise DataFormatError(
                        f"line {line_no}: bad expression value {expr_s!r}"
                    ) from None
                if not 0 <= expression < len(CLASS_NAMES):
                    raise DataFormatError(
                        f"line {line_no}: expression {expression} outside "
                        f"[0, {len(CLASS_NAMES)})"
                    )
            else:
                expression = None
            recipe = row[6].strip() or None if has_augment else None
            if recipe is None:
                # augmented duplicates deliberately reuse their source frame
                key = (video, frame)
                if key in seen:
                    raise DataFormatError(
                        f"line {line_no}: duplicate (video, frame) {key}, "
                        f"first seen on line {seen[key]}"
                    )
                seen[key] = line_no
            samples.append(Sample(
                path=path_col,
                video=video,
                frame=frame,
                valence=_parse_float(val_s, line_no, "valence"),
                arousal=_parse_float(aro_s, line_no, "arousal"),
                expression=expression,
                augment=recipe,
            ))
    return samples


def write_manifest(samples, path):
    with_recipes = any(s.augment for s in samples)
    columns = _MANIFEST_COLUMNS + (("augment",) if with_recipes else ())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for s in samples:
            row = [s.path, s.video, s.frame, repr(s.valence), repr(s.arousal),
                   "" if s.expression is None else s.expression]
            if with_recipes:
                row.append(s.augment or "")
            writer.writerow(row)


# ---------------------------------------------------------------------------
# coherence filter

def filter_coherence(samples, neutral_threshold=0.5, neutral_both=True):
    """Drop samples whose categorical and dimensional labels disagree.

    Rule order (first match is the attributed cause):
      1. valence or arousal outside [-1, 1]
      2. Happiness with negative valence
      3. Sadness with positive valence
      4. Neutral with |valence| and |arousal| beyond the threshold
         (neutral_both=False relaxes the conjunction to either axis)
    """
    kept = []
    removed = {"invalid": 0, "happy": 0, "sad": 0, "neutral": 0}
    for s in samples:
        if not (-1.0 <= s.valence <= 1.0 and -1.0 <= s.arousal <= 1.0):
            removed["invalid"] += 1
        elif s.expression == _HAPPINESS and s.valence < 0:
            removed["happy"] += 1
        elif s.expression == _SADNESS and s.valence > 0:
            removed["sad"] += 1
        elif s.expression == _NEUTRAL and (
            (abs(s.valence) > neutral_threshold and abs(s.arousal) > neutral_threshold)
            if neutral_both else
            (abs(s.valence) > neutral_threshold or abs(s.arousal) > neutral_threshold)
        ):
            removed["neutral"] += 1
        else:
            kept.append(s)
    report = FilterReport(
        input_count=len(samples),
        kept=len(kept),
        invalid_range=removed["invalid"],
        happy_negative=removed["happy"],
        sad_positive=removed["sad"],
        neutral_extreme=removed["neutral"],
    )
    return kept, report


# ---------------------------------------------------------------------------
# binning and balancing

def bin_valence(v):
    """Map [-1, 1] onto 21 bins of width 0.1 centered at -1.0 .. 1.0."""
    if not -1.0 <= v <= 1.0:
        raise ValidationError(f"value {v} outside [-1, 1]")
    # argument is >= 0, so round-half-away-from-zero == floor(x + 0.5);
    # pre-round at 9 decimals to absorb float noise like 11.299999...
    return min(int(math.floor(round((v + 1.0) * 10.0, 9) + 0.5)), _BIN_COUNT - 1)


@dataclass(frozen=True)
class Recipe:
    """One augmentation draw; defaults compose to the identity."""

    flip: bool = False
    angle: float = 0.0
    brightness: float = 1.0
    crop: tuple | None = None

    def to_string(self):
        crop = "-" if self.crop is None else f"{self.crop[0]}:{self.crop[1]}"
        return (f"f{int(self.flip)}|a{self.angle!r}|"
                f"b{self.brightness!r}|c{crop}")

    @classmethod
    def from_string(cls, text):
        try:
            f, a, b, c = text.split("|")
            assert f[0] == "f" and a[0] == "a" and b[0] == "b" and c[0] == "c"
            crop = None
            if c[1:] != "-":
                dy, dx = c[1:].split(":")
                crop = (int(dy), int(dx))
            return cls(flip=bool(int(f[1:])), angle=float(a[1:]),
                       brightness=float(b[1:]), crop=crop)
        except (ValueError, AssertionError):
            raise DataFormatError(f"bad recipe string {text!r}") from None


def draw_recipe(rng):
    max_off = INPUT_SIZE - _CROP_SIZE
    return Recipe(
        flip=bool(rng.integers(0, 2)),
        angle=float(rng.uniform(-10.0, 10.0)),
        brightness=float(rng.uniform(0.8, 1.2)),
        crop=(int(rng.integers(0, max_off + 1)), int(rng.integers(0, max_off + 1))),
    )


def _balance_rng(seed):
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((_RECIPE_TAG, seed))))


def _equalize(samples, key_of, rng):
    """Append augmented duplicates until all groups reach the max count.

    Groups are processed in sorted key order; within a group, source samples
    are drawn round-robin in their original order.
    """
    groups = {}
    for s in samples:
        k = key_of(s)
        if k is not None:
            groups.setdefault(k, []).append(s)
    if not groups:
        return list(samples)
    target = max(len(g) for g in groups.values())
    out = list(samples)
    for k in sorted(groups):
        members = groups[k]
        for i in range(target - len(members)):
            source = members[i % len(members)]
            out.append(replace(source, augment=draw_recipe(rng).to_string()))
    return out


def balance_categorical(samples, seed):
    """Oversample so every expression class matches the largest one."""
    counts = {c: 0 for c in range(len(CLASS_NAMES))}
    for s in samples:
        if s.expression is not None:
            counts[s.expression] += 1
    empty = [CLASS_NAMES[c] for c, n in counts.items() if n == 0]
    if empty:
        raise ValidationError(f"classes with no samples: {', '.join(empty)}")
    return _equalize(samples, lambda s: s.expression, _balance_rng(seed))


def balance_dimensional(samples, seed):
    """Oversample so every occupied valence bin matches the largest one."""
    return _equalize(samples, lambda s: bin_valence(s.valence), _balance_rng(seed))


# ---------------------------------------------------------------------------
# augmentation

def _bilinear(img, ys, xs):
    """Sample img at fractional coords with edge clamp."""
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[..., None].astype(img.dtype)
    wx = (xs - x0)[..., None].astype(img.dtype)
    top = img[y0, x0] * (1 - wx) + img[y0, x1] * wx
    bot = img[y1, x0] * (1 - wx) + img[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def _resize(img, size):
    h, w = img.shape[:2]
    ys = (np.arange(size) + 0.5) * (h / size) - 0.5
    xs = (np.arange(size) + 0.5) * (w / size) - 0.5
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear(img, gy, gx)


def augment(image, recipe):
    """Apply a recipe: flip, rotate, crop+resize, then brightness."""
    img = np.asarray(image, dtype=np.float32)
    if img.shape != (INPUT_SIZE, INPUT_SIZE, 3):
        raise ValidationError(f"augment expects 120x120x3, got {img.shape}")
    if recipe.flip:
        img = img[:, ::-1, :]
    if recipe.angle != 0.0:
        theta = math.radians(recipe.angle)
        c, s = math.cos(theta), math.sin(theta)
        half = (INPUT_SIZE - 1) / 2.0
        coords = np.arange(INPUT_SIZE) - half
        gy, gx = np.meshgrid(coords, coords, indexing="ij")
        # inverse rotation of the output grid back into the source
        src_y = half + gy * c - gx * s
        src_x = half + gy * s + gx * c
        img = _bilinear(img, src_y, src_x)
    if recipe.crop is not None:
        dy, dx = recipe.crop
        max_off = INPUT_SIZE - _CROP_SIZE
        if not (0 <= dy <= max_off and 0 <= dx <= max_off):
            raise ValidationError(f"crop offset {recipe.crop} outside [0, {max_off}]")
        img = _resize(img[dy:dy + _CROP_SIZE, dx:dx + _CROP_SIZE], INPUT_SIZE)
    if recipe.brightness != 1.0:
        img = img * np.float32(recipe.brightness)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# windowing

def window_sequences(samples, length=10, stride=10):
    """Cut per-video runs of consecutive frames into fixed windows.

    Windows never span a gap in frame indices and never overlap; trailing
    frames short of a full window are dropped.
    """
    ordered = sorted(samples, key=lambda s: (s.video, s.frame))
    clips = []
    run = []
    for s in ordered:
        if run and (s.video != run[-1].video or s.frame != run[-1].frame + 1):
            clips.extend(_cut(run, length, stride))
            run = []
        run.append(s)
    clips.extend(_cut(run, length, stride))
    return clips


def _cut(run, length, stride):
    return [Clip(samples=tuple(run[i:i + length]))
            for i in range(0, len(run) - length + 1, stride)]


# ---------------------------------------------------------------------------
# image decoding

_IMAGE_FLOATS = INPUT_SIZE * INPUT_SIZE * 3


def _read_f32(path):
    data = np.fromfile(path, dtype="<f4")
    if data.size != _IMAGE_FLOATS:
        raise DataFormatError(
            f"{path}: expected {_IMAGE_FLOATS} floats, found {data.size}"
        )
    if not np.isfinite(data).all() or data.min() < 0.0 or data.max() > 1.0:
        raise DataFormatError(f"{path}: float values outside [0, 1]")
    return data.reshape(INPUT_SIZE, INPUT_SIZE, 3)


def _ppm_token(fh):
    # whitespace-separated token; '#' starts a comment through end of line
    token = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise DataFormatError("truncated header")
        if ch == b"#":
            while ch and ch != b"\n":
                ch = fh.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def _read_ppm(path):
    with open(path, "rb") as fh:
        try:
            magic = _ppm_token(fh)
            if magic != b"P6":
                raise DataFormatError(f"{path}: bad magic {magic!r}, want P6")
            width = int(_ppm_token(fh))
            height = int(_ppm_token(fh))
            maxval = int(_ppm_token(fh))
        except DataFormatError as err:
            raise DataFormatError(f"{path}: {err}") from None
        except ValueError:
            raise DataFormatError(f"{path}: non-numeric header field") from None
        if (width, height) != (INPUT_SIZE, INPUT_SIZE):
            raise DataFormatError(
                f"{path}: image is {width}x{height}, want {INPUT_SIZE}x{INPUT_SIZE}"
            )
        if maxval != 255:
            raise DataFormatError(f"{path}: maxval {maxval}, want 255")
        raw = fh.read(width * height * 3)
        if len(raw) != width * height * 3:
            raise DataFormatError(
                f"{path}: short pixel data ({len(raw)} of {width * height * 3} bytes)"
            )
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
    return pixels.astype(np.float32) / np.float32(255.0)


def decode_image(path):
    """Load a 120x120x3 float tensor in [0, 1] from PPM P6 or raw .f32."""
    if str(path).endswith(".f32"):
        return _read_f32(path).astype(np.float32)
    return _read_ppm(path)


def load_sample(sample, cache=None):
    """Decode a sample's image, applying its augmentation recipe if any."""
    if cache is not None and sample.path in cache:
        img = cache[sample.path]
    else:
        img = decode_image(sample.path)
        if cache is not None:
            cache[sample.path] = img
    if sample.augment:
        img = augment(img, Recipe.from_string(sample.augment))
    return img


# ---------------------------------------------------------------------------
# distribution stats

@dataclass(frozen=True)
class StatsReport:
    class_counts: dict
    unlabeled: int
    valence_hist: tuple
    arousal_hist: tuple
    n: int

    def text(self):
        lines = ["expression counts"]
        width = max(len(n) for n in CLASS_NAMES)
        for name in CLASS_NAMES:
            lines.append(f"  {name:<{width}} {self.class_counts[name]}")
        if self.unlabeled:
            lines.append(f"  {'(unlabeled)':<{width}} {self.unlabeled}")
        lines.append("")
        lines.append("bin      valence  arousal")
        for i in range(_BIN_COUNT):
            center = -1.0 + 0.1 * i
            lines.append(
                f"{center:+.1f}  {self.valence_hist[i]:>9} {self.arousal_hist[i]:>8}"
            )
        lines.append("")
        lines.append(f"total {self.n}")
        return "\n".join(lines) + "\n"

    def class_csv(self):
        lines = ["label,count"]
        lines += [f"{name},{self.class_counts[name]}" for name in CLASS_NAMES]
        if self.unlabeled:
            lines.append(f"unlabeled,{self.unlabeled}")
        return "\n".join(lines) + "\n"

    def dims_csv(self):
        lines = ["bin_center,valence_count,arousal_count"]
        for i in range(_BIN_COUNT):
            lines.append(f"{-1.0 + 0.1 * i:.1f},{self.valence_hist[i]},{self.arousal_hist[i]}")
        return "\n".join(lines) + "\n"


def stats(samples):
    """Class counts plus 21-bin valence and arousal histograms."""
    class_counts = {name: 0 for name in CLASS_NAMES}
    unlabeled = 0
    val_hist = [0] * _BIN_COUNT
    aro_hist = [0] * _BIN_COUNT
    for s in samples:
        if s.expression is None:
            unlabeled += 1
        else:
            class_counts[CLASS_NAMES[s.expression]] += 1
        if -1.0 <= s.valence <= 1.0:
            val_hist[bin_valence(s.valence)] += 1
        if -1.0 <= s.arousal <= 1.0:
            aro_hist[bin_valence(s.arousal)] += 1
    return StatsReport(
        class_counts=class_counts,
        unlabeled=unlabeled,
        valence_hist=tuple(val_hist),
        arousal_hist=tuple(aro_hist),
        n=len(samples),
    )
