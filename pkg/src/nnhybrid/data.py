"""Datasets: IDX and CSV loaders, seeded splits, normalisation, synthetic blobs."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import DTYPE

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
STD_FLOOR = 1e-8


class DataError(ValueError):
    pass


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class RaggedRowError(DataError):
    pass


class NonNumericError(DataError):
    pass


class EmptyFileError(DataError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = ""
    label_names: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.labels) != len(self.features):
            raise DataError(f"{len(self.labels)} labels for {len(self.features)} samples")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return tuple(self.features.shape[1:])

    def subset(self, indices, name=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.class_count,
                       self.name if name is None else name, self.label_names)

    def with_features(self, features):
        return Dataset(np.asarray(features, dtype=DTYPE), self.labels, self.class_count,
                       self.name, self.label_names)


def concat(a, b, name=None):
    if a.sample_shape != b.sample_shape and len(a) and len(b):
        raise DataError(f"cannot join samples of shape {a.sample_shape} and {b.sample_shape}")
    return Dataset(np.concatenate([a.features, b.features]),
                   np.concatenate([a.labels, b.labels]),
                   max(a.class_count, b.class_count),
                   name or a.name, a.label_names)


# ----------------------------------------------------------------------------
# IDX


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, magic, kind):
    with _open(path) as f:
        blob = f.read()
    if len(blob) < 8:
        raise TruncatedFileError(f"{path}: {kind} header truncated")
    (got,) = struct.unpack(">I", blob[:4])
    if got != magic:
        raise BadMagicError(f"{path}: expected {kind} magic 0x{magic:08x}, got 0x{got:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise TruncatedFileError(f"{path}: {kind} header truncated")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    need = int(np.prod(dims, dtype=np.int64))
    if len(blob) - header < need:
        raise TruncatedFileError(
            f"{path}: {kind} payload has {len(blob) - header} bytes, header promises {need}")
    return np.frombuffer(blob, dtype=np.uint8, count=need, offset=header).reshape(dims)


def load_idx(image_path, label_path, name="mnist"):
    images = _read_idx(image_path, IDX_IMAGE_MAGIC, "image")
    labels = _read_idx(label_path, IDX_LABEL_MAGIC, "label")
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.astype(DTYPE)[:, None, :, :] / 255.0
    labels = labels.astype(np.int64)
    class_count = int(labels.max()) + 1 if labels.size else 0
    return Dataset(features, labels, class_count, name)


def _write(path, header, payload):
    path = str(path)
    if path.endswith(".gz"):
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as f:
            f.write(header + payload)
    else:
        with open(path, "wb") as f:
            f.write(header + payload)


def write_idx(image_path, label_path, dataset):
    """Inverse of :func:`load_idx` for datasets whose pixels are multiples of 1/255."""
    shape = dataset.sample_shape[-2:]
    pixels = np.rint(np.asarray(dataset.features).reshape((len(dataset),) + shape) * 255)
    pixels = pixels.clip(0, 255).astype(np.uint8)
    _write(image_path, struct.pack(">IIII", IDX_IMAGE_MAGIC, *pixels.shape), pixels.tobytes())
    _write(label_path, struct.pack(">II", IDX_LABEL_MAGIC, len(dataset)),
           np.asarray(dataset.labels, dtype=np.uint8).tobytes())


# ----------------------------------------------------------------------------
# CSV


def _cell(value, row_no, col_no):
    try:
        return float(value)
    except ValueError:
        raise NonNumericError(f"row {row_no}, column {col_no}: {value!r} is not numeric") from None


def load_csv(path, label_column=-1, header=False, delimiter=",", drop_columns=(),
             image_shape=None, name=None):
    """Read a rectangular numeric table (or several, stacked in order).

    ``label_column`` is an index (negative counts from the end) or, with
    ``header``, a column name. ``delimiter=None`` splits on whitespace, which
    suits the UCI Shuttle files. ``image_shape`` (e.g. ``(1, 28, 28)``)
    reshapes each row into an image and scales pixels by 1/255.
    """
    paths = [path] if isinstance(path, (str, Path)) else list(path)
    rows, names = [], None
    for p in paths:
        with open(p, newline="") as f:
            if delimiter is None:
                part = [line.split() for line in f if line.strip()]
            else:
                part = [r for r in csv.reader(f, delimiter=delimiter) if any(c.strip() for c in r)]
        if header and part:
            names = names or [c.strip() for c in part[0]]
            part = part[1:]
        rows.extend(part)
    path = paths[0] if len(paths) == 1 else "+".join(map(str, paths))
    if not rows:
        raise EmptyFileError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise RaggedRowError(f"{path}: row {i + 1} has {len(r)} cells, expected {width}")

    def resolve(col):
        if isinstance(col, str):
            if names is None or col not in names:
                raise DataError(f"{path}: no column named {col!r}")
            return names.index(col)
        return col % width

    label_idx = resolve(label_column)
    dropped = {resolve(c) for c in drop_columns} | {label_idx}
    keep = [j for j in range(width) if j not in dropped]
    feats = np.empty((len(rows), len(keep)), dtype=DTYPE)
    raw_labels = np.empty(len(rows), dtype=DTYPE)
    for i, r in enumerate(rows):
        feats[i] = [_cell(r[j], i + 1, j) for j in keep]
        raw_labels[i] = _cell(r[label_idx], i + 1, label_idx)
    if not np.all(raw_labels == np.rint(raw_labels)):
        raise NonNumericError(f"{path}: label column holds non-integral values")
    originals, labels = np.unique(raw_labels.astype(np.int64), return_inverse=True)
    if image_shape is not None:
        feats = feats.reshape((len(rows),) + tuple(image_shape)) / 255.0
    return Dataset(feats, labels.astype(np.int64), len(originals),
                   name or str(path), tuple(int(v) for v in originals))


# ----------------------------------------------------------------------------
# splitting and normalisation


@dataclass(frozen=True)
class SplitSpec:
    train_count: int
    val_count: int
    test_count: int
    seed: int = 0
    strategy: str = "shuffled"  # or "given-order"


def split(dataset, spec):
    """Return (train, val, test) as contiguous blocks of a (possibly shuffled) index order."""
    counts = (spec.train_count, spec.val_count, spec.test_count)
    if min(counts) < 0:
        raise DataError(f"split counts must be non-negative, got {counts}")
    if sum(counts) > len(dataset):
        raise DataError(f"split counts {counts} exceed the {len(dataset)} available samples")
    if spec.strategy == "shuffled":
        order = np.random.default_rng(spec.seed).permutation(len(dataset))
    elif spec.strategy == "given-order":
        order = np.arange(len(dataset))
    else:
        raise DataError(f"unknown split strategy {spec.strategy!r}")
    a, b = spec.train_count, spec.train_count + spec.val_count
    c = b + spec.test_count
    return (dataset.subset(order[:a], f"{dataset.name}:train"),
            dataset.subset(order[a:b], f"{dataset.name}:val"),
            dataset.subset(order[b:c], f"{dataset.name}:test"))


@dataclass(frozen=True)
class NormalizationStats:
    mode: str
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    divisor: float = 1.0


def normalize_fit(train, mode):
    x = np.asarray(train.features, dtype=DTYPE)
    if x.shape[0] == 0:
        raise DataError("cannot fit normalisation on an empty dataset")
    if mode == "image":
        return NormalizationStats("image", divisor=255.0 if x.max() > 1.0 else 1.0)
    if mode == "zscore":
        mean = x.mean(axis=0)
        std = np.maximum(x.std(axis=0), STD_FLOOR)
        return NormalizationStats("zscore", mean, std)
    raise DataError(f"unknown normalisation mode {mode!r}")


def normalize_apply(stats, dataset):
    x = np.asarray(dataset.features, dtype=DTYPE)
    if stats.mode == "image":
        return dataset.with_features(x / stats.divisor)
    return dataset.with_features((x - stats.mean) / stats.std)


# ----------------------------------------------------------------------------
# synthetic data


def blob_centers(dims, class_count, separation, rng):
    """Random centres rescaled so the closest pair is exactly ``separation`` apart."""
    if class_count == 1:
        return np.zeros((1, dims))
    centers = rng.normal(size=(class_count, dims))
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    closest = dist[np.triu_indices(class_count, 1)].min()
    return centers * (separation / closest)


def synth_blobs(per_class, dims, class_count, separation, seed, shape=None, name="blobs",
                return_centers=False):
    """Unit-variance Gaussian blobs, shuffled. ``shape`` reshapes each sample (e.g. to an image)."""
    if separation <= 0:
        raise DataError("separation must be positive")
    rng = np.random.default_rng(seed)
    centers = blob_centers(dims, class_count, separation, rng)
    labels = np.repeat(np.arange(class_count), per_class)
    feats = centers[labels] + rng.normal(size=(labels.size, dims))
    order = rng.permutation(labels.size)
    feats, labels = feats[order], labels[order]
    if shape is not None:
        feats = feats.reshape((labels.size,) + tuple(shape))
    ds = Dataset(feats, labels, class_count, name)
    return (ds, centers) if return_centers else ds
