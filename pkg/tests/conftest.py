import numpy as np
import pytest

from fckit import backend, datapipe
from fckit.model import CLASS_NAMES


@pytest.fixture(scope="session", autouse=True)
def _numpy_backend():
    # deterministic and fastest on this box; backend-specific tests switch
    # explicitly and restore
    backend.set_backend("numpy")


def write_f32(path, value=0.5, rng=None):
    """Write a 120x120x3 raw float image; value may be scalar or array."""
    if rng is not None:
        img = np.clip(rng.uniform(0.0, 1.0, (120, 120, 3)), 0.0, 1.0)
    elif np.isscalar(value):
        img = np.full((120, 120, 3), value, dtype=np.float32)
    else:
        img = np.asarray(value, dtype=np.float32)
    img.astype("<f4").tofile(path)
    return str(path)


def write_ppm(path, pixels=None):
    """Write a 120x120 P6 image; pixels is a (120,120,3) uint8 array."""
    if pixels is None:
        pixels = np.zeros((120, 120, 3), dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n120 120\n255\n")
        fh.write(np.asarray(pixels, dtype=np.uint8).tobytes())
    return str(path)


def write_manifest(path, samples):
    datapipe.write_manifest(samples, str(path))
    return str(path)


@pytest.fixture
def filter_fixture():
    """One sample per coherence rule plus one that survives."""
    anger = CLASS_NAMES.index("Anger")
    happy = CLASS_NAMES.index("Happiness")
    sad = CLASS_NAMES.index("Sadness")
    neutral = CLASS_NAMES.index("Neutral")
    disgust = CLASS_NAMES.index("Disgust")
    s = datapipe.Sample
    return [
        s("a.f32", "v0", 0, -5.0, 0.0, anger),      # invalid range
        s("b.f32", "v0", 1, -0.3, 0.0, happy),      # happy, negative valence
        s("c.f32", "v0", 2, 0.2, 0.0, sad),         # sad, positive valence
        s("d.f32", "v0", 3, 0.6, 0.7, neutral),     # neutral, both extreme
        s("e.f32", "v0", 4, 0.1, 0.1, disgust),     # kept
    ]


def overfit_samples(root):
    """64 synthetic samples whose labels derive from the image class color."""
    rng = np.random.default_rng(11)
    samples = []
    for i in range(64):
        cls = i % 7
        color = np.array([(cls >> b) & 1 for b in range(3)], np.float32)
        img = 0.35 + 0.3 * color * np.ones((120, 120, 3), np.float32)
        img += 0.15 * rng.standard_normal((120, 120, 3)).astype(np.float32)
        img = np.clip(img, 0.0, 1.0)
        path = str(root / f"s{i:02d}.f32")
        img.astype("<f4").tofile(path)
        arousal = (cls - 3) / 6.0
        valence = ((cls * 2) % 7 - 3) / 6.0
        samples.append(datapipe.Sample(path, "v0", i, valence, arousal, cls))
    return samples


@pytest.fixture(scope="session")
def overfit_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    return overfit_samples(root)
