"""IDX image/label files and a synthetic dataset for fast tests."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ConfigurationError,
    CountMismatchError,
    InputError,
    TruncatedFileError,
)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_GZIP_MAGIC = b"\x1f\x8b"


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, H, W) in [0, 1]
    labels: np.ndarray  # (N,) int
    num_classes: int = 10

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim == 2:
            self.images = self.images[:, None, :]
        if len(self.images) != len(self.labels):
            raise InputError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise InputError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def num_features(self):
        return int(np.prod(self.images.shape[1:]))

    def flat(self):
        return self.images.reshape(len(self), -1)

    def subset(self, index):
        return ImageDataset(self.images[index], self.labels[index], self.num_classes)


def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == _GZIP_MAGIC:
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic):
    """Parse one IDX file of unsigned bytes. Returns a uint8 array."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(
            f"{path}: bad magic number 0x{magic:08X}, expected 0x{expected_magic:08X}"
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < count:
        raise TruncatedFileError(
            f"{path}: expected {count} data bytes for dims {dims}, found {len(raw) - header}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes=10):
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} "
            f"holds {labels.shape[0]} labels"
        )
    if labels.size and labels.max() >= num_classes:
        raise InputError(f"{labels_path}: label {labels.max()} >= num_classes {num_classes}")
    return ImageDataset(images / 255.0, labels.astype(np.int64), num_classes)


def _write_idx(path, magic, array, compress):
    body = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    body += np.ascontiguousarray(array, dtype=np.uint8).tobytes()
    if compress:
        body = gzip.compress(body, mtime=0)
    with open(path, "wb") as fh:
        fh.write(body)


def save_idx(dataset, images_path, labels_path, compress=None):
    """Write pixels as round(255 * p). Gzip when a path ends in ``.gz`` unless told otherwise."""
    pixels = np.rint(dataset.images * 255.0).astype(np.uint8)
    for path, magic, arr in ((images_path, IMAGES_MAGIC, pixels),
                             (labels_path, LABELS_MAGIC, dataset.labels.astype(np.uint8))):
        gz = str(path).endswith(".gz") if compress is None else compress
        _write_idx(path, magic, arr, gz)


def synthetic_dataset(num_samples, num_classes, image_size=(8, 8), seed=0):
    """Class-templated images: one bright stripe per class over uniform noise.

    Labels are assigned round-robin and the sample order is then shuffled.
    """
    if num_samples <= 0 or num_classes <= 0:
        raise ConfigurationError("num_samples and num_classes must be positive")
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    n_pix = int(np.prod(image_size))
    if n_pix < num_classes:
        raise ConfigurationError(f"{n_pix} pixels cannot hold {num_classes} disjoint regions")
    rng = np.random.default_rng(seed)
    regions = np.array_split(np.arange(n_pix), num_classes)
    templates = np.zeros((num_classes, n_pix))
    for c, idx in enumerate(regions):
        templates[c, idx] = 0.8

    labels = np.arange(num_samples) % num_classes
    rng.shuffle(labels)
    noise = rng.uniform(0.0, 0.2, size=(num_samples, n_pix))
    images = np.clip(templates[labels] + noise, 0.0, 1.0)
    return ImageDataset(images.reshape((num_samples, *image_size)), labels, num_classes)


def template_regions(num_classes, image_size=(8, 8)):
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    return np.array_split(np.arange(int(np.prod(image_size))), num_classes)
