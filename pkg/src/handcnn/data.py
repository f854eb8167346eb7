"""Dataset ingestion: manifests, image decoding, folds, batches, synthetic data.

A dataset is a CSV manifest (``path,label``) next to the image files it
names.  Labels are strictly ``hand`` / ``nohand``; hand maps to one-hot
[0, 1] and nohand to [1, 0].  Images of any size decode to 32 x 32 RGB by
bilinear resampling in float space (aspect ratio is not preserved) and
pixels are scaled to [0, 1].

The synthetic dataset is a CI stand-in for the real hand corpora, which
cannot be redistributed: "hand" images carry a solid bright square on
noise, "nohand" images are pure noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor
from .errors import ConfigError, DataError, DimensionError

IMAGE_HW = 32
LABELS = ("nohand", "hand")           # one-hot index == position here
_ONE_HOT = {"nohand": (1.0, 0.0), "hand": (0.0, 1.0)}


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str


@dataclass
class Sample:
    pixels: np.ndarray    # 32 x 32 x 3, values in [0, 1]
    label: np.ndarray     # one-hot length 2


@dataclass
class FoldPlan:
    k: int
    folds: list           # list of (train_idx, test_idx) index arrays


def load_manifest(path) -> list:
    """Parse a ``path,label`` CSV; strict labels, duplicate paths rejected."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    entries = []
    seen = set()
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "label"]:
            raise DataError(f"{path}: line 1: header must be exactly 'path,label'")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}: line {line_no}: expected 2 columns, got {len(row)}")
            img_path, label = row[0].strip(), row[1].strip()
            if not img_path:
                raise DataError(f"{path}: line {line_no}: empty image path")
            if label not in LABELS:
                raise DataError(f"{path}: line {line_no}: unknown label {label!r} "
                                f"(expected one of {LABELS})")
            if img_path in seen:
                raise DataError(f"{path}: line {line_no}: duplicate path {img_path!r}")
            seen.add(img_path)
            entries.append(ManifestEntry(img_path, label))
    return entries


def one_hot(label: str) -> np.ndarray:
    return np.asarray(_ONE_HOT[label], dtype=tensor.active_dtype())


def resize_bilinear(arr: np.ndarray, hw: int) -> np.ndarray:
    """Per-channel float-space bilinear resize (no uint8 rounding)."""
    channels = [
        np.asarray(Image.fromarray(arr[:, :, c], mode="F").resize((hw, hw), Image.BILINEAR))
        for c in range(arr.shape[2])
    ]
    return np.stack(channels, axis=2)


def load_image(path) -> np.ndarray:
    """Decode an image file to a 32 x 32 x 3 array of [0, 1] pixels.

    PNG/JPEG go through the raster decoder; ``.hftn`` files are raw tensor
    fixtures already holding H x W x 3 float pixels in [0, 1], useful for
    container-independent tests.
    """
    if str(path).endswith(".hftn"):
        arr = tensor.read_hftn(path)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DataError(f"{path}: image fixture must be H x W x 3, got {arr.shape}")
        if arr.shape[:2] != (IMAGE_HW, IMAGE_HW):
            arr = resize_bilinear(arr.astype(np.float32), IMAGE_HW)
        return arr.astype(tensor.active_dtype())
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None
    return (resize_bilinear(rgb, IMAGE_HW) / 255.0).astype(tensor.active_dtype())


def decode_and_prepare(entry: ManifestEntry, root=None) -> Sample:
    """Decode, resize to 32 x 32 RGB, scale pixels to [0, 1], attach the one-hot label."""
    full = Path(root) / entry.path if root is not None else Path(entry.path)
    return Sample(pixels=load_image(full), label=one_hot(entry.label))


def decode_all(entries, root=None) -> list:
    return [decode_and_prepare(entry, root) for entry in entries]


def make_folds(n: int, k: int, labels, seed: int) -> FoldPlan:
    """Stratified k-fold plan: per-class shuffle, then round-robin dealing.

    Every index lands in exactly one test fold and per-fold class counts
    differ by at most one sample.
    """
    labels = list(labels)
    if len(labels) != n:
        raise ConfigError(f"got {len(labels)} labels for n={n}")
    if k < 2:
        raise ConfigError(f"k must be at least 2, got {k}")
    if k > n:
        raise ConfigError(f"k={k} exceeds the {n} available samples")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ConfigError("both classes must be present to stratify")
    rng = np.random.default_rng([int(seed), 4])
    test_folds = [[] for _ in range(k)]
    for cls in classes:
        idx = np.asarray([i for i, lab in enumerate(labels) if lab == cls])
        if len(idx) < k:
            raise ConfigError(f"class {cls!r} has {len(idx)} members, fewer than k={k}")
        rng.shuffle(idx)
        for j, sample_idx in enumerate(idx):
            test_folds[j % k].append(int(sample_idx))
    everything = set(range(n))
    folds = []
    for test in test_folds:
        test_sorted = np.asarray(sorted(test), dtype=np.int64)
        train_sorted = np.asarray(sorted(everything.difference(test)), dtype=np.int64)
        folds.append((train_sorted, test_sorted))
    return FoldPlan(k=k, folds=folds)


def batches(samples, batch_size: int, seed: int, epoch: int, count: int | None = None):
    """Yield (pixels, labels) batches for one epoch.

    The shuffle is keyed by (seed, epoch).  Batches always hold exactly
    ``batch_size`` samples; when ``count`` batches exceed the epoch's
    samples, the shuffled order wraps around.  Default count is one pass
    (floor(n / batch_size), at least 1).
    """
    if not samples:
        raise DataError("empty sample list")
    if batch_size < 1:
        raise ConfigError(f"batch size must be positive, got {batch_size}")
    n = len(samples)
    if count is None:
        count = max(1, n // batch_size)
    rng = np.random.default_rng([int(seed), 2, int(epoch)])
    order = rng.permutation(n)
    pixels = np.stack([samples[i].pixels for i in order])
    labels = np.stack([samples[i].label for i in order])
    cursor = 0
    for _ in range(count):
        picks = np.arange(cursor, cursor + batch_size) % n
        cursor = (cursor + batch_size) % n
        yield pixels[picks], labels[picks]


SQUARE_SIZE = 12


def synth_dataset(n: int, seed: int) -> list:
    """Deterministic separable set: bright-square-on-noise vs pure noise.

    Samples alternate hand / nohand so any prefix stays nearly balanced.
    """
    if n % 2 != 0:
        raise ConfigError(f"synthetic dataset size must be even, got {n}")
    rng = np.random.default_rng([int(seed), 3])
    dtype = tensor.active_dtype()
    out = []
    for i in range(n):
        pixels = rng.random((IMAGE_HW, IMAGE_HW, 3))
        if i % 2 == 0:   # hand: solid bright square at a random position
            top = int(rng.integers(0, IMAGE_HW - SQUARE_SIZE + 1))
            left = int(rng.integers(0, IMAGE_HW - SQUARE_SIZE + 1))
            pixels[top:top + SQUARE_SIZE, left:left + SQUARE_SIZE, :] = 1.0
            label = "hand"
        else:
            label = "nohand"
        out.append(Sample(pixels=pixels.astype(dtype), label=one_hot(label)))
    return out


def write_synth_dataset(out_dir, n: int, seed: int) -> Path:
    """Materialize a synthetic dataset as PNGs plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    samples = synth_dataset(n, seed)
    rows = []
    for i, sample in enumerate(samples):
        label = LABELS[int(np.argmax(sample.label))]
        rel = f"images/{label}_{i:04d}.png"
        img = Image.fromarray(np.rint(sample.pixels * 255.0).astype(np.uint8), mode="RGB")
        img.save(out_dir / rel)
        rows.append((rel, label))
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "label"])
        writer.writerows(rows)
    return manifest


def stack_samples(samples):
    """Samples -> (N x 32 x 32 x 3 pixels, N x 2 labels)."""
    if not samples:
        raise DataError("empty sample list")
    pixels = np.stack([s.pixels for s in samples])
    labels = np.stack([s.label for s in samples])
    if pixels.shape[1:] != (IMAGE_HW, IMAGE_HW, 3):
        raise DimensionError(f"samples are {pixels.shape[1:]}, expected (32, 32, 3)")
    return pixels, labels
