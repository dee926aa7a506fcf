"""Data ingestion: IDX image/label pairs, CSV tables and a synthetic blob generator.

All sources end up as :class:`LabeledDataset` splits with features in
[0, 1]. Images are divided by 255; CSV columns are min-max scaled with
training-split statistics; synthetic data is generated inside [0, 1].
"""

from __future__ import annotations

import csv
import gzip
import io
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ParameterError, ParseError
from .linalg import load_matrix, save_matrix

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"
    image_shape: tuple | None = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ParameterError(f"{self.features.shape} features vs {self.labels.shape} labels")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, mask_or_idx) -> "LabeledDataset":
        return LabeledDataset(self.features[mask_or_idx], self.labels[mask_or_idx], self.split, self.image_shape)

    def with_classes(self, classes) -> "LabeledDataset":
        return self.subset(np.isin(self.labels, list(classes)))


@dataclass
class DatasetSplits:
    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for ds in (self.train, self.val, self.test):
            save_matrix(directory / f"{ds.split}_features.dkmat", ds.features)
            (directory / f"{ds.split}_labels.csv").write_text(
                "label\n" + "".join(f"{int(v)}\n" for v in ds.labels))
        shape = "" if self.train.image_shape is None else "x".join(map(str, self.train.image_shape))
        (directory / "image_shape.txt").write_text(shape + "\n")

    @classmethod
    def load(cls, directory) -> "DatasetSplits":
        directory = Path(directory)
        raw = (directory / "image_shape.txt").read_text().strip()
        shape = tuple(int(v) for v in raw.split("x")) if raw else None
        parts = []
        for split in ("train", "val", "test"):
            feats = load_matrix(directory / f"{split}_features.dkmat")
            labels = np.loadtxt(directory / f"{split}_labels.csv", skiprows=1, dtype=np.int64, ndmin=1)
            parts.append(LabeledDataset(feats, labels, split, shape))
        return cls(*parts)


def _open_binary(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (big-endian header: two zero bytes, type code, ndim, then u32 dims)."""
    raw = _open_binary(path)
    if len(raw) < 4:
        raise ParseError(f"{path}: file shorter than the 4-byte magic")
    if raw[0] != 0 or raw[1] != 0:
        raise ParseError(f"{path}: bad IDX magic {raw[:4].hex()} at byte offset 0")
    dtype = _IDX_TYPES.get(raw[2])
    if dtype is None:
        raise ParseError(f"{path}: unknown IDX type code 0x{raw[2]:02x} at byte offset 2")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError(f"{path}: truncated dimension header at byte offset {len(raw)}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = math.prod(dims)
    expected = header + count * dtype.itemsize
    if len(raw) != expected:
        raise ParseError(f"{path}: expected {expected} bytes, payload ends at byte offset {len(raw)}")
    return np.frombuffer(raw, dtype=dtype, offset=header, count=count).reshape(dims)


def write_idx(path, array, type_code: int = 0x08) -> None:
    array = np.asarray(array)
    dtype = _IDX_TYPES[type_code]
    header = bytes([0, 0, type_code, array.ndim]) + struct.pack(">" + "I" * array.ndim, *array.shape)
    Path(path).write_bytes(header + array.astype(dtype).tobytes())


def read_csv_table(path, label_column=-1, header: bool | None = None):
    """Read a numeric CSV; returns ``(features, labels)``.

    ``label_column`` is a column index or, with a header row, a column name.
    ``header=None`` detects a header by the first row failing to parse as numbers.
    """
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    names = None
    first_line, first = rows[0]
    if header is None:
        try:
            [float(c) for c in first]
            header = False
        except ValueError:
            header = True
    if header:
        names = [c.strip() for c in first]
        rows = rows[1:]
    width = len(first)
    if isinstance(label_column, str):
        if names is None or label_column not in names:
            raise ParseError(f"{path}: label column {label_column!r} not found in header")
        label_column = names.index(label_column)
    if not -width <= label_column < width:
        raise ParseError(f"{path}: label column {label_column} out of range for {width} columns")
    label_column %= width
    values = np.empty((len(rows), width))
    for r, (line, row) in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        try:
            values[r] = [float(c) for c in row]
        except ValueError as exc:
            raise ParseError(f"{path}: line {line}: {exc}") from exc
    labels = values[:, label_column]
    if not np.all(labels == np.round(labels)):
        raise ParseError(f"{path}: label column {label_column} is not integer valued")
    features = np.delete(values, label_column, axis=1)
    return features, labels.astype(np.int64)


def split_indices(n: int, fractions=(0.7, 0.15, 0.15), seed: int = 0):
    if abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ParameterError(f"split fractions {fractions} must be non-negative and sum to 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def _make_splits(features, labels, fractions, seed, image_shape, scale_columns=False) -> DatasetSplits:
    tr, va, te = split_indices(features.shape[0], fractions, seed)
    if scale_columns:
        lo = features[tr].min(axis=0)
        span = features[tr].max(axis=0) - lo
        span[span == 0] = 1.0
        features = np.clip((features - lo) / span, 0.0, 1.0)
    return DatasetSplits(
        LabeledDataset(features[tr], labels[tr], "train", image_shape),
        LabeledDataset(features[va], labels[va], "val", image_shape),
        LabeledDataset(features[te], labels[te], "test", image_shape),
    )


def _subsample(features, labels, n_samples, seed):
    if n_samples is None or n_samples >= features.shape[0]:
        return features, labels
    idx = np.sort(np.random.default_rng(seed).choice(features.shape[0], size=n_samples, replace=False))
    return features[idx], labels[idx]


def ingest_idx(images_path, labels_path, n_samples=None, seed=0, fractions=(0.7, 0.15, 0.15),
               classes=None) -> DatasetSplits:
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64).ravel()
    if images.shape[0] != labels.shape[0]:
        raise ParseError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    shape = tuple(images.shape[1:]) if images.ndim == 3 else None
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if classes is not None:
        keep = np.isin(labels, list(classes))
        feats, labels = feats[keep], labels[keep]
    feats, labels = _subsample(feats, labels, n_samples, seed)
    return _make_splits(feats, labels, fractions, seed, shape)


def ingest_csv(path, label_column=-1, n_samples=None, seed=0, fractions=(0.7, 0.15, 0.15),
               classes=None, header=None) -> DatasetSplits:
    feats, labels = read_csv_table(path, label_column, header)
    if classes is not None:
        keep = np.isin(labels, list(classes))
        feats, labels = feats[keep], labels[keep]
    feats, labels = _subsample(feats, labels, n_samples, seed)
    return _make_splits(feats, labels, fractions, seed, None, scale_columns=True)


def _smooth_fields(rng, count, side, width):
    """``count`` random fields on a ``side x side`` grid, Gaussian-smoothed and unit-variance."""
    grid = np.arange(side, dtype=np.float64)
    kern = np.exp(-((grid[:, None] - grid[None, :]) ** 2) / (2 * width**2))
    raw = rng.normal(size=(count, side, side))
    fields = np.einsum("ij,cjk,kl->cil", kern, raw, kern)
    fields /= fields.reshape(count, -1).std(axis=1)[:, None, None]
    return fields.reshape(count, side * side)


def make_blobs(n: int, classes: int, d: int = 784, seed: int = 0, modes: int = 3,
               latent_dim: int = 8, spread: float = 0.5, gain: float = 1.5):
    """Synthetic labelled data in [0, 1]^d with exactly balanced classes.

    Each class is a mixture of ``modes`` Gaussian blobs in a
    ``latent_dim``-dimensional latent space (centres ~ N(0, I), blob std
    ``spread``), so classes are multi-modal and interleaved. Latent points
    are mapped to input space through ``sigmoid(gain * A z + b)``; when ``d``
    is a perfect square the columns of ``A`` and the offset ``b`` are smooth
    random images, so samples render as blurry ``sqrt(d) x sqrt(d)`` pictures.

    Returns ``(features, labels, image_shape)``; labels come in class order.
    """
    if classes < 1 or n < classes:
        raise ParameterError(f"need n >= classes >= 1, got n={n}, classes={classes}")
    rng = np.random.default_rng(seed)
    counts = np.full(classes, n // classes)
    counts[: n % classes] += 1
    labels = np.repeat(np.arange(classes), counts)
    centres = rng.normal(size=(classes, modes, latent_dim))
    mode = rng.integers(0, modes, size=n)
    z = centres[labels, mode] + spread * rng.normal(size=(n, latent_dim))
    side = math.isqrt(d)
    if side * side == d and side >= 8:
        fields = _smooth_fields(rng, latent_dim + 1, side, side / 10.0)
        mixing, offset = fields[:latent_dim].T, fields[latent_dim] - 1.0
        shape = (side, side)
    else:
        mixing, offset = rng.normal(size=(d, latent_dim)), rng.normal(-1.0, 1.0, size=d)
        shape = None
    x = expit(gain * z @ mixing.T / math.sqrt(latent_dim) + offset)
    return x, labels, shape


def ingest_synthetic(n: int, classes: int, d: int = 784, seed: int = 0, fractions=(0.7, 0.15, 0.15),
                     keep_classes=None) -> DatasetSplits:
    feats, labels, shape = make_blobs(n, classes, d, seed)
    if keep_classes is not None:
        keep = np.isin(labels, list(keep_classes))
        feats, labels = feats[keep], labels[keep]
    return _make_splits(feats, labels, fractions, seed, shape)


def write_pgm(path, image) -> None:
    """8-bit binary (P5) greyscale image from values in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 1:
        img = img[None, :]
    pixels = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    match = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if match is None:
        raise ParseError(f"{path}: not a binary PGM")
    w, h, maxval = (int(v) for v in match.groups())
    data = np.frombuffer(raw, dtype=np.uint8, offset=match.end())
    if data.size != w * h:
        raise ParseError(f"{path}: expected {w * h} pixels, found {data.size}")
    return data.reshape(h, w).astype(np.float64) / maxval
