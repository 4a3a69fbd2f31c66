"""Dataset loading, preprocessing, splitting and synthetic fixtures."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .numeric import RandomSource

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# proposals allowed per blob centre before giving up
BLOB_RETRY_BUDGET = 200


class FormatError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScalingRecord:
    min: np.ndarray
    max: np.ndarray


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    labels: np.ndarray | None = None
    n_classes: int = 0
    scaler: ScalingRecord | None = None
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        object.__setattr__(self, "X", X)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (X.shape[0],):
                raise ValueError(f"expected {X.shape[0]} labels, got {labels.shape}")
            n_classes = self.n_classes or (int(labels.max()) + 1 if labels.size else 0)
            if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
                raise ValueError(f"labels must lie in [0, {n_classes})")
            object.__setattr__(self, "labels", labels)
            object.__setattr__(self, "n_classes", n_classes)
        else:
            object.__setattr__(self, "n_classes", 0)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def c(self) -> int:
        return self.n_classes

    def take(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[indices]
        return replace(self, X=self.X[indices], labels=labels)


def _read_idx(path, expected_magic):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4:
        raise OSError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise OSError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise OSError(f"{path}: truncated IDX payload ({len(raw) - header} of {size} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path=None) -> Dataset:
    """Read an IDX image file (and optional label file) into a Dataset.

    Images are flattened row-wise and divided by 255.
    """
    images = _read_idx(images_path, IDX_IMAGE_MAGIC)
    n, h, w = images.shape
    X = images.reshape(n, h * w).astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        labels = _read_idx(labels_path, IDX_LABEL_MAGIC).astype(np.int64)
        if labels.shape[0] != n:
            raise FormatError(f"{n} images but {labels.shape[0]} labels")
    return Dataset(X=X, labels=labels, image_shape=(h, w))


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w) + images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]) + labels.tobytes())


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, has_labels: bool = False) -> Dataset:
    """Read a rectangular numeric CSV; the last column holds labels if flagged.

    A first row containing a non-numeric cell is treated as a header.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
        first_line = 2
    else:
        first_line = 1
    if not rows:
        raise FormatError(f"{path}: no data rows")
    width = len(rows[0])
    values = []
    for lineno, row in enumerate(rows, start=first_line):
        if len(row) != width:
            raise FormatError(f"{path}: ragged row at line {lineno} ({len(row)} fields, expected {width})")
        parsed = []
        for col, cell in enumerate(row, start=1):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise FormatError(f"{path}: non-numeric value {cell!r} at row {lineno}, column {col}") from None
        values.append(parsed)
    arr = np.array(values, dtype=np.float64)
    if not has_labels:
        return Dataset(X=arr)
    if width < 2:
        raise FormatError(f"{path}: need at least one feature column plus a label column")
    raw_labels = arr[:, -1]
    labels = raw_labels.astype(np.int64)
    if not np.array_equal(labels, raw_labels) or labels.min() < 0:
        raise FormatError(f"{path}: label column must hold non-negative integers")
    return Dataset(X=arr[:, :-1], labels=labels)


def minmax_scale(dataset: Dataset) -> Dataset:
    X = dataset.X
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    # constant features map to 0
    scaled = np.where(span > 0, (X - lo) / safe, 0.0)
    return replace(dataset, X=np.clip(scaled, 0.0, 1.0), scaler=ScalingRecord(min=lo, max=hi))


def split(dataset: Dataset, train_fraction: float, rng: RandomSource) -> tuple[Dataset, Dataset]:
    """Seeded uniform shuffle; the first floor(n * fraction) rows train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n_train = int(np.floor(dataset.n * train_fraction))
    if n_train == 0 or n_train == dataset.n:
        raise ValueError(f"split of n={dataset.n} at {train_fraction} leaves an empty side")
    perm = rng.permutation(dataset.n)
    return dataset.take(perm[:n_train]), dataset.take(perm[n_train:])


def subsample(dataset: Dataset, fraction: float, rng: RandomSource) -> Dataset:
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    size = int(round(dataset.n * fraction))
    if size == 0:
        raise ValueError(f"subsample of n={dataset.n} at {fraction} is empty")
    return dataset.take(rng.permutation(dataset.n)[:size])


def make_blobs(n: int, d: int, c: int, separation: float, rng: RandomSource) -> Dataset:
    """Isotropic unit-variance Gaussian clusters with centres >= separation apart.

    Centres are proposed from N(0, s^2 I) with s = separation / sqrt(d), so
    typical pairwise distances are about 1.4 * separation; each rejection
    widens s by 10%. Sample i belongs to cluster i % c.
    """
    if not (n >= c >= 1 and d >= 1 and separation > 0):
        raise ValueError(f"need n >= c >= 1, d >= 1, separation > 0 (got n={n}, c={c}, d={d})")
    scale = separation / np.sqrt(d)
    centers = []
    for _ in range(c):
        for _attempt in range(BLOB_RETRY_BUDGET):
            cand = rng.normal(d) * scale
            if all(np.linalg.norm(cand - other) >= separation for other in centers):
                centers.append(cand)
                break
            scale *= 1.1
        else:
            raise GenerationError(f"could not place {c} centres {separation} apart in {d} dims")
    labels = np.arange(n, dtype=np.int64) % c
    X = np.asarray(centers)[labels] + rng.normal(n * d).reshape(n, d)
    return Dataset(X=X, labels=labels, n_classes=c)
