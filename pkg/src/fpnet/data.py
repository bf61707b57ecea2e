"""Datasets: IDX image files, few-shot subsampling, synthetic tasks, CSV export.

IDX is the classic big-endian binary layout used by the common handwritten
digit and fashion image benchmarks: a magic number, big-endian int32
dimensions, then raw unsigned bytes. Images load as (N, 1, rows, cols)
float64 scaled by 1/255; labels become one-hot rows over max_label + 1
classes.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataConsistencyError, IdxFormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
PIXEL_SCALE = 1.0 / 255.0


@dataclass
class Dataset:
    """Samples x, strict one-hot labels y, and one name per class."""

    x: np.ndarray
    y: np.ndarray
    class_names: list

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim < 2:
            raise ValueError("x needs a leading sample axis plus features")
        if self.y.ndim != 2 or self.y.shape[0] != self.x.shape[0]:
            raise ValueError("y must be (n_samples, n_classes) aligned with x")
        onehot = np.isin(self.y, (0.0, 1.0)).all() and (self.y.sum(axis=1) == 1.0).all()
        if not onehot:
            raise ValueError("y must be exactly one-hot")
        self.class_names = [str(c) for c in self.class_names]
        if len(self.class_names) != self.y.shape[1]:
            raise ValueError("need one class name per label column")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def label_dim(self):
        return self.y.shape[1]

    @property
    def labels(self):
        return np.argmax(self.y, axis=1)


def _read_exact(buf, offset, count, path):
    if len(buf) < offset + count:
        raise IdxFormatError(f"{path}: file truncated", offset=len(buf))
    return buf[offset:offset + count]


def read_idx_images(path):
    """Raw (N, rows, cols) uint8 pixels from an IDX image file."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic,) = struct.unpack(">i", _read_exact(buf, 0, 4, path))
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(
            f"{path}: bad image magic 0x{magic & 0xffffffff:08x}", offset=0)
    n, rows, cols = struct.unpack(">iii", _read_exact(buf, 4, 12, path))
    if n < 0 or rows <= 0 or cols <= 0:
        raise IdxFormatError(f"{path}: bad dimensions {(n, rows, cols)}", offset=4)
    payload = _read_exact(buf, 16, n * rows * cols, path)
    if len(buf) != 16 + n * rows * cols:
        raise IdxFormatError(f"{path}: trailing bytes after image data",
                             offset=16 + n * rows * cols)
    return np.frombuffer(payload, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path):
    """Raw (N,) uint8 labels from an IDX label file."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic,) = struct.unpack(">i", _read_exact(buf, 0, 4, path))
    if magic != LABEL_MAGIC:
        raise IdxFormatError(
            f"{path}: bad label magic 0x{magic & 0xffffffff:08x}", offset=0)
    (n,) = struct.unpack(">i", _read_exact(buf, 4, 4, path))
    if n < 0:
        raise IdxFormatError(f"{path}: negative count {n}", offset=4)
    payload = _read_exact(buf, 8, n, path)
    if len(buf) != 8 + n:
        raise IdxFormatError(f"{path}: trailing bytes after label data",
                             offset=8 + n)
    return np.frombuffer(payload, dtype=np.uint8)


def one_hot(labels, n_classes=None):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError("labels must be 1-D")
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    if n_classes < 1:
        raise ValueError("need at least one class")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("label outside [0, n_classes)")
    y = np.zeros((labels.shape[0], n_classes))
    y[np.arange(labels.shape[0]), labels] = 1.0
    return y


def load_idx(images_path, labels_path):
    """Load an IDX image/label pair as a Dataset.

    Pixels scale to [0, 1] with a single channel axis: x is
    (N, 1, rows, cols). The class count is max_label + 1 and class names
    are the digit strings.
    """
    imgs = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if imgs.shape[0] != labels.shape[0]:
        raise DataConsistencyError(
            f"{imgs.shape[0]} images but {labels.shape[0]} labels")
    if imgs.shape[0] == 0:
        raise DataConsistencyError("empty dataset")
    x = imgs.astype(np.float64)[:, None, :, :] * PIXEL_SCALE
    y = one_hot(labels)
    return Dataset(x, y, [str(i) for i in range(y.shape[1])])


def write_idx(ds, images_path, labels_path):
    """Write a Dataset back to canonical IDX image and label files.

    Pixels are recovered as round(x * 255); loading a written pair
    reproduces the original files byte for byte.
    """
    x = ds.x
    if x.ndim == 4 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 3:
        raise ValueError("write_idx needs single-channel image data")
    pixels = np.rint(x / PIXEL_SCALE)
    if pixels.min() < 0 or pixels.max() > 255:
        raise ValueError("pixel values leave the byte range")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">iiii", IMAGE_MAGIC, x.shape[0], x.shape[1],
                             x.shape[2]))
        fh.write(pixels.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">ii", LABEL_MAGIC, ds.n))
        fh.write(ds.labels.astype(np.uint8).tobytes())


def few_shot_subsample(ds, n_per_class, rng):
    """Pick n_per_class samples of every class, without replacement.

    Output keeps class blocks in class order and original order within
    each block. A class with fewer than n_per_class members raises
    ValueError naming it.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    labels = ds.labels
    picks = []
    for c in range(ds.label_dim):
        members = np.nonzero(labels == c)[0]
        if members.shape[0] < n_per_class:
            raise ValueError(
                f"class {ds.class_names[c]!r} has only {members.shape[0]} "
                f"samples, need {n_per_class}")
        chosen = rng.subset_without_replacement(members, n_per_class)
        picks.append(np.sort(chosen))
    sel = np.concatenate(picks)
    return Dataset(ds.x[sel], ds.y[sel], ds.class_names)


def synthetic_gaussian_task(n, dim, classes, separation, rng):
    """Balanced Gaussian blobs: class c is N(separation * e_c, I).

    More classes than dimensions is only solvable with zero separation and
    is rejected otherwise. Rows are shuffled (deterministically per rng).
    """
    n, dim, classes = int(n), int(dim), int(classes)
    if n < classes or dim < 1 or classes < 1:
        raise ValueError("need n >= classes >= 1 and dim >= 1")
    if classes > dim and separation > 0:
        raise ValueError(
            f"{classes} separated classes do not fit in {dim} dimensions")
    counts = [n // classes + (1 if c < n % classes else 0)
              for c in range(classes)]
    labels = np.repeat(np.arange(classes), counts)
    x = rng.standard_normal((n, dim))
    if separation != 0.0:
        for c in range(classes):
            x[labels == c, c] += separation
    order = rng.permutation(n)
    return Dataset(x[order], one_hot(labels[order], classes),
                   [str(c) for c in range(classes)])


def dataset_to_csv(ds, path):
    """One sample per line: flattened features then the label index."""
    flat = ds.x.reshape(ds.n, -1)
    labels = ds.labels
    with open(path, "w") as fh:
        fh.write(",".join(f"x{i}" for i in range(flat.shape[1])) + ",label\n")
        for i in range(ds.n):
            feats = ",".join(f"{v:.10g}" for v in flat[i])
            fh.write(f"{feats},{labels[i]}\n")
