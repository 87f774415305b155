"""Dataset ingestion: IDX image/label files and CIFAR-10 binary batches.

Loaders are pure file parsers: no downloads happen here.  Paths come from the
caller (CLI flag ``--data-dir`` or the ``RETINOTOPIC_DATA_DIR`` environment
variable); ``scripts/fetch_datasets.py`` can populate the layout on a
networked machine.  Gzipped files are handled transparently by sniffing the
two-byte gzip magic.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


class DataError(Exception):
    """Base class for dataset-file problems."""


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class FileSizeError(DataError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) integers 0..9
    split: str
    name: str

    def __post_init__(self) -> None:
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise DataError("labels must lie in 0..9")

    def __len__(self) -> int:
        return int(self.images.shape[0])


def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def load_idx(images_path, labels_path, split: str = "train", name: str = "mnist") -> Dataset:
    """Parse big-endian IDX image + label files into a normalized dataset."""
    img_raw = _read_maybe_gzip(images_path)
    if len(img_raw) < 16:
        raise TruncatedFileError(f"{images_path}: too short for an IDX image header")
    magic, n, h, w = struct.unpack(">IIII", img_raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise BadMagicError(
            f"{images_path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    expected = 16 + n * h * w
    if len(img_raw) != expected:
        raise TruncatedFileError(f"{images_path}: {len(img_raw)} bytes, expected {expected}")

    lbl_raw = _read_maybe_gzip(labels_path)
    if len(lbl_raw) < 8:
        raise TruncatedFileError(f"{labels_path}: too short for an IDX label header")
    magic2, n2 = struct.unpack(">II", lbl_raw[:8])
    if magic2 != IDX_LABELS_MAGIC:
        raise BadMagicError(
            f"{labels_path}: magic 0x{magic2:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    if len(lbl_raw) != 8 + n2:
        raise TruncatedFileError(f"{labels_path}: {len(lbl_raw)} bytes, expected {8 + n2}")
    if n != n2:
        raise CountMismatchError(f"{n} images vs {n2} labels")

    images = np.frombuffer(img_raw, np.uint8, offset=16).reshape(n, 1, h, w)
    labels = np.frombuffer(lbl_raw, np.uint8, offset=8).astype(np.int64)
    return Dataset(images.astype(np.float32) / 255.0, labels, split, name)


def load_cifar10(root, split: str = "train") -> Dataset:
    """Parse the binary-batch distribution: per record 1 label byte followed
    by 3072 channel-planar RGB bytes."""
    root = Path(root)
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    images, labels = [], []
    for fname in names:
        raw = _read_maybe_gzip(root / fname)
        if len(raw) == 0 or len(raw) % _CIFAR_RECORD:
            raise FileSizeError(
                f"{root / fname}: {len(raw)} bytes is not a whole number of "
                f"{_CIFAR_RECORD}-byte records (nearest {round(len(raw) / _CIFAR_RECORD) * _CIFAR_RECORD})"
            )
        recs = np.frombuffer(raw, np.uint8).reshape(-1, _CIFAR_RECORD)
        labels.append(recs[:, 0].astype(np.int64))
        images.append(recs[:, 1:].reshape(-1, 3, 32, 32))
    return Dataset(
        np.concatenate(images).astype(np.float32) / 255.0,
        np.concatenate(labels),
        split,
        "cifar10",
    )


def normalize_stats(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over the whole split; std floored at 1e-6."""
    mean = ds.images.mean(axis=(0, 2, 3))
    std = np.maximum(ds.images.std(axis=(0, 2, 3)), 1e-6)
    return mean, std


# ---------------------------------------------------------------------------
# path resolution for the CLI

DATA_DIR_ENV = "RETINOTOPIC_DATA_DIR"

_IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def resolve_data_dir(cli_value=None) -> Path:
    if cli_value:
        return Path(cli_value)
    env = os.environ.get(DATA_DIR_ENV)
    return Path(env) if env else Path("data")


def _existing(*candidates: Path) -> Path:
    for c in candidates:
        if c.exists():
            return c
    raise FileNotFoundError(
        "none of these dataset files exist: " + ", ".join(str(c) for c in candidates)
    )


def load_dataset(name: str, data_dir, split: str = "train") -> Dataset:
    """Load a named dataset from ``data_dir/<name>/`` (gz accepted)."""
    base = Path(data_dir) / name
    if name in ("mnist", "fashion_mnist"):
        img_name, lbl_name = _IDX_FILES[split]
        img = _existing(base / img_name, base / f"{img_name}.gz")
        lbl = _existing(base / lbl_name, base / f"{lbl_name}.gz")
        return load_idx(img, lbl, split, name)
    if name == "cifar10":
        sub = base / "cifar-10-batches-bin"
        return load_cifar10(sub if sub.is_dir() else base, split)
    raise ValueError(f"unknown dataset {name!r} (expected mnist, fashion_mnist, cifar10)")
