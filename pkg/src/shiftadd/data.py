"""Datasets: synthetic desk-scale image tasks and a raw-array file format.

Generator specs look like ``synth:blobs:classes=3,n=800,hw=12,seed=7`` or
``synth:digits:n=1000,seed=1``. Files are ``.npz`` archives holding
``images`` (float, ``N x C x H x W``) and ``labels`` (int, ``N``), with
optional ``is_test`` (bool, ``N``) and ``classes`` (scalar).
"""
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    classes: int
    is_test: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if self.images.ndim != 4 or self.images.shape[0] != n:
            raise DataError(f"images must be N x C x H x W with N={n}, got {self.images.shape}")
        if n < 1:
            raise DataError("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.classes:
            raise DataError(f"labels must lie in [0, {self.classes})")
        self.is_test = np.asarray(self.is_test, dtype=bool)

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return self.images.shape[1:]

    def subset(self, mask, suffix):
        return Dataset(self.images[mask], self.labels[mask], self.classes, np.zeros(int(mask.sum()), bool),
                       f"{self.name}{suffix}") if mask.any() else _EmptySplit(self, suffix)

    def train_split(self):
        return self.subset(~self.is_test, ":train")

    def test_split(self):
        return self.subset(self.is_test, ":test")


class _EmptySplit:
    def __init__(self, parent, suffix):
        self.images = parent.images[:0]
        self.labels = parent.labels[:0]
        self.classes = parent.classes
        self.name = parent.name + suffix

    def __len__(self):
        return 0


def _split(labels, test_fraction, rng):
    """Stratified split: per class, the first ``round(test_fraction * count)`` shuffled samples go to test."""
    is_test = np.zeros(len(labels), bool)
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        is_test[idx[: int(round(test_fraction * len(idx)))]] = True
    return is_test


def _balanced_labels(n, classes, rng):
    labels = np.arange(n) % classes
    return rng.permutation(labels)


def _normalize(images):
    mean = images.mean(axis=(0, 2, 3), keepdims=True)
    std = images.std(axis=(0, 2, 3), keepdims=True)
    return (images - mean) / np.where(std > 0, std, 1.0)


def make_blobs(classes=3, n=800, hw=12, seed=7, test_fraction=0.25, noise=0.5, jitter=0.7, channels=1):
    """Gaussian blobs on an ``hw x hw`` grid; each class has its own blob centre and width.

    Class centres sit evenly on a circle around the grid centre (random phase).

    Every image also carries a distractor blob at a uniformly random place
    plus pixel noise, so the task needs spatial features rather than a
    pixel threshold.
    """
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi)
    angles = phase + 2 * np.pi * np.arange(classes) / classes
    radius = hw / 4
    centres = (hw - 1) / 2 + radius * np.stack([np.sin(angles), np.cos(angles)], axis=1)
    widths = rng.uniform(1.0, 2.0, size=classes)
    labels = _balanced_labels(n, classes, rng)
    yy, xx = np.mgrid[0:hw, 0:hw]
    images = np.empty((n, channels, hw, hw))
    for i, c in enumerate(labels):
        cy, cx = centres[c] + rng.normal(0, jitter, size=2)
        amp = rng.uniform(0.7, 1.3)
        blob = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * widths[c] ** 2))
        dy, dx = rng.uniform(0, hw - 1, size=2)
        dw = rng.uniform(1.0, 2.0)
        distractor = rng.uniform(0.3, 0.8) * np.exp(-((yy - dy) ** 2 + (xx - dx) ** 2) / (2 * dw**2))
        for ch in range(channels):
            images[i, ch] = blob + distractor + rng.normal(0, noise, size=(hw, hw))
    return Dataset(_normalize(images), labels, classes, _split(labels, test_fraction, rng),
                   f"blobs-c{classes}-n{n}-hw{hw}-s{seed}")


# seven-segment style strokes on an 8x8 canvas: (row0, col0, row1, col1)
_SEGMENTS = {
    "a": (1, 2, 1, 5), "b": (1, 5, 3, 5), "c": (4, 5, 6, 5), "d": (6, 2, 6, 5),
    "e": (4, 2, 6, 2), "f": (1, 2, 3, 2), "g": (3, 2, 3, 5),
}
_DIGITS = ["abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"]


def _glyph(digit):
    img = np.zeros((8, 8))
    for seg in _DIGITS[digit]:
        r0, c0, r1, c1 = _SEGMENTS[seg]
        img[r0 : r1 + 1, c0 : c1 + 1] = 1.0
    return img


def make_digits(n=1000, seed=1, test_fraction=0.25, noise=0.35, classes=10):
    """8x8 seven-segment digit glyphs with a random one-pixel shift and pixel noise."""
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, classes, rng)
    glyphs = np.stack([_glyph(d) for d in range(10)])
    images = np.empty((n, 1, 8, 8))
    for i, c in enumerate(labels):
        dy, dx = rng.integers(-1, 2, size=2)
        g = np.roll(np.roll(glyphs[c], dy, axis=0), dx, axis=1)
        images[i, 0] = g * rng.uniform(0.7, 1.2) + rng.normal(0, noise, size=(8, 8))
    return Dataset(_normalize(images), labels, classes, _split(labels, test_fraction, rng),
                   f"digits-n{n}-s{seed}")


GENERATORS = {"blobs": make_blobs, "digits": make_digits}
_INT_KEYS = {"classes", "n", "hw", "seed", "channels"}


def parse_generator_spec(spec):
    parts = spec.split(":", 2)
    if len(parts) < 2 or parts[0] != "synth":
        raise DataError(f"not a generator spec: {spec!r}")
    name = parts[1]
    if name not in GENERATORS:
        raise DataError(f"unknown generator {name!r}; have {sorted(GENERATORS)}")
    kwargs = {}
    if len(parts) == 3 and parts[2]:
        for item in parts[2].split(","):
            key, sep, val = item.partition("=")
            if not sep:
                raise DataError(f"malformed generator option {item!r}")
            try:
                kwargs[key.strip()] = int(val) if key.strip() in _INT_KEYS else float(val)
            except ValueError:
                raise DataError(f"bad value for {key!r}: {val!r}") from None
    return name, kwargs


def load_dataset(source):
    """Build a dataset from a ``synth:...`` spec or load an ``.npz`` file."""
    source = str(source)
    if source.startswith("synth:"):
        name, kwargs = parse_generator_spec(source)
        try:
            return GENERATORS[name](**kwargs)
        except TypeError as exc:
            raise DataError(f"bad options for generator {name!r}: {exc}") from None
    try:
        with np.load(source, allow_pickle=False) as z:
            images, labels = z["images"], z["labels"]
            classes = int(z["classes"]) if "classes" in z else int(labels.max()) + 1
            is_test = z["is_test"] if "is_test" in z else np.zeros(len(labels), bool)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read dataset {source!r}: {exc}") from None
    if images.ndim == 3:
        images = images[:, None]
    return Dataset(_normalize(np.asarray(images, dtype=np.float64)), labels, classes, is_test, str(source))


def save_dataset(path, ds):
    np.savez(path, images=ds.images, labels=ds.labels, is_test=ds.is_test, classes=ds.classes)
