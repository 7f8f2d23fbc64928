"""Dataset ingestion, imbalanced split construction, and deterministic batching.

Conventions used throughout the package: images are float32 arrays of shape
(N, H, W, channels) with pixel values in [0, 1]; labels are int64 arrays over
{0..C-1}. All sampling here is driven by explicit integer seeds, so every
operation is a pure function of its inputs.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CapacityError,
    DataConsistencyError,
    IdxFormatError,
    IdxLengthError,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
_GZIP_MAGIC = b"\x1f\x8b"

# Training counts of the standard 10-class imbalanced benchmark split (IR = 100),
# used as the default for the mnist/fmnist presets.
BENCHMARK_TRAIN_COUNTS = (4000, 2000, 1000, 750, 500, 350, 200, 100, 60, 40)


def class_histogram(labels: np.ndarray, num_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)


@dataclass
class LabeledImageSet:
    """Images plus integer labels, the raw material for all splits."""

    images: np.ndarray  # (N, H, W, channels), float32 in [0, 1]
    labels: np.ndarray  # (N,), int64 in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(
                f"images must have shape (N, H, W, channels), got {self.images.shape}"
            )
        if self.labels.ndim != 1 or len(self.labels) != len(self.images):
            raise DataConsistencyError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if len(self.labels) > 0:
            if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
                raise ValueError(
                    f"labels must lie in [0, {self.num_classes}), "
                    f"found range [{self.labels.min()}, {self.labels.max()}]"
                )
            if float(self.images.min()) < 0.0 or float(self.images.max()) > 1.0:
                raise ValueError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def class_histogram(self) -> np.ndarray:
        return class_histogram(self.labels, self.num_classes)

    def take(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.images[idx], self.labels[idx]


@dataclass
class ImbalancedDataset:
    """A class-imbalanced training split subsampled from a larger source."""

    base: LabeledImageSet
    per_class_counts: np.ndarray
    seed: int

    def __post_init__(self):
        self.per_class_counts = np.asarray(self.per_class_counts, dtype=np.int64)
        if self.per_class_counts.min() < 1:
            raise ValueError("every class needs at least one sample")
        hist = self.base.class_histogram()
        if not np.array_equal(hist, self.per_class_counts):
            raise DataConsistencyError(
                f"class histogram {hist.tolist()} does not match "
                f"declared counts {self.per_class_counts.tolist()}"
            )

    def __len__(self) -> int:
        return len(self.base)

    @property
    def num_classes(self) -> int:
        return self.base.num_classes

    @property
    def imbalance_ratio(self) -> float:
        return float(self.per_class_counts.max()) / float(self.per_class_counts.min())

    @property
    def majority_class(self) -> int:
        return int(np.argmax(self.per_class_counts))

    @property
    def minority_class(self) -> int:
        return int(np.argmin(self.per_class_counts))

    def take(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.base.take(idx)


@dataclass
class BalancedView:
    """Index-level repetition-oversampled view of an imbalanced split.

    `indices` maps balanced positions to positions in `source`; no pixel data
    is copied until a batch is materialised.
    """

    source: ImbalancedDataset
    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def num_classes(self) -> int:
        return self.source.num_classes

    @property
    def labels(self) -> np.ndarray:
        return self.source.base.labels[self.indices]

    def take(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.source.base.take(self.indices[idx])


def _read_maybe_gzip(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == _GZIP_MAGIC:
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def load_idx(images_path, labels_path) -> LabeledImageSet:
    """Parse a big-endian IDX image/label file pair (optionally gzipped).

    Pixel bytes are scaled by 1/255 so the result lies in [0, 1].
    """
    raw_img = _read_maybe_gzip(images_path)
    raw_lbl = _read_maybe_gzip(labels_path)

    if len(raw_img) < 16:
        raise IdxLengthError(f"{images_path}: file too short for an image header")
    magic, count, rows, cols = struct.unpack(">IIII", raw_img[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(
            f"{images_path}: magic 0x{magic:08X}, expected 0x{IDX_IMAGE_MAGIC:08X}"
        )
    expected = count * rows * cols
    payload = raw_img[16:]
    if len(payload) != expected:
        raise IdxLengthError(
            f"{images_path}: expected {expected} pixel bytes, found {len(payload)}"
        )

    if len(raw_lbl) < 8:
        raise IdxLengthError(f"{labels_path}: file too short for a label header")
    lbl_magic, lbl_count = struct.unpack(">II", raw_lbl[:8])
    if lbl_magic != IDX_LABEL_MAGIC:
        raise IdxFormatError(
            f"{labels_path}: magic 0x{lbl_magic:08X}, expected 0x{IDX_LABEL_MAGIC:08X}"
        )
    lbl_payload = raw_lbl[8:]
    if len(lbl_payload) != lbl_count:
        raise IdxLengthError(
            f"{labels_path}: expected {lbl_count} label bytes, found {len(lbl_payload)}"
        )
    if count != lbl_count:
        raise DataConsistencyError(
            f"{count} images in {images_path} but {lbl_count} labels in {labels_path}"
        )

    images = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
    images = images.reshape(count, rows, cols, 1)
    labels = np.frombuffer(lbl_payload, dtype=np.uint8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if count else 1
    return LabeledImageSet(images=images, labels=labels, num_classes=num_classes)


def make_imbalanced(src: LabeledImageSet, per_class_counts, seed: int) -> ImbalancedDataset:
    """Subsample `src` so class c keeps exactly per_class_counts[c] samples.

    Selection is uniform without replacement per class, and the final sample
    order is a seeded shuffle of the per-class concatenation. The result is
    fully determined by (src, per_class_counts, seed).
    """
    counts = np.asarray(per_class_counts, dtype=np.int64)
    if len(counts) != src.num_classes:
        raise ValueError(
            f"got {len(counts)} counts for {src.num_classes} classes"
        )
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(src.num_classes):
        pool = np.flatnonzero(src.labels == c)
        if counts[c] > pool.size:
            raise CapacityError(
                f"class {c}: requested {counts[c]} samples but only {pool.size} available"
            )
        chosen.append(rng.choice(pool, size=counts[c], replace=False))
    order = rng.permutation(np.concatenate(chosen))
    base = LabeledImageSet(
        images=src.images[order],
        labels=src.labels[order],
        num_classes=src.num_classes,
    )
    return ImbalancedDataset(base=base, per_class_counts=counts, seed=seed)


def make_balanced_by_repetition(src: ImbalancedDataset, seed: int) -> BalancedView:
    """Oversample every class by repetition up to the majority count.

    With target T = max_c(p_c), each class contributes floor(T / p_c) full
    cycles of its indices plus (T mod p_c) extra indices drawn without
    replacement, so no sample is repeated more than one cycle beyond its
    classmates.
    """
    if len(src) == 0:
        raise ValueError("source dataset is empty")
    target = int(src.per_class_counts.max())
    rng = np.random.default_rng(seed)
    parts = []
    for c in range(src.num_classes):
        pool = np.flatnonzero(src.base.labels == c)
        full, extra = divmod(target, pool.size)
        part = [np.tile(pool, full)]
        if extra:
            part.append(rng.choice(pool, size=extra, replace=False))
        parts.append(np.concatenate(part))
    return BalancedView(source=src, indices=np.concatenate(parts))


def batch_iter(view, batch_size: int, seed: int, epoch: int):
    """Yield (images, labels) batches over a seeded permutation of `view`.

    The permutation is keyed by (seed, epoch); the last partial batch is
    kept. `view` is anything with __len__ and take(indices).
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(view)
    rng = np.random.default_rng([seed, epoch])
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield view.take(perm[start : start + batch_size])


def make_synthetic_blobs(
    per_class_counts,
    image_size: int = 8,
    seed: int = 0,
    blob_sigma: float = 1.3,
    jitter: float = 0.7,
    noise: float = 0.08,
) -> LabeledImageSet:
    """Generate Gaussian-blob images, one blob position per class.

    Class c gets a bright blob at a class-specific location (plus per-sample
    jitter and pixel noise), giving a small separable problem for smoke runs.
    """
    counts = np.asarray(per_class_counts, dtype=np.int64)
    num_classes = len(counts)
    rng = np.random.default_rng(seed)
    mid = (image_size - 1) / 2.0
    radius = image_size * 0.28
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes + np.pi / 4.0
    centers = np.stack(
        [mid + radius * np.cos(angles), mid + radius * np.sin(angles)], axis=1
    )
    yy, xx = np.meshgrid(np.arange(image_size), np.arange(image_size), indexing="ij")

    images, labels = [], []
    for c in range(num_classes):
        for _ in range(counts[c]):
            cy, cx = centers[c] + jitter * rng.standard_normal(2)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * blob_sigma**2))
            img = (0.75 + 0.25 * rng.random()) * blob
            img = img + noise * rng.standard_normal(img.shape)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(c)
    images = np.asarray(images, dtype=np.float32)[..., None]
    labels = np.asarray(labels, dtype=np.int64)
    order = rng.permutation(len(labels))
    return LabeledImageSet(
        images=images[order], labels=labels[order], num_classes=num_classes
    )
