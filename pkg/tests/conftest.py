"""Shared test helpers: synthetic datasets, on-disk fixtures, image transforms."""

import struct

import numpy as np
import pytest

from retinotopic.data import Dataset
from retinotopic.sampler import bilinear_sample_field

# canonical IDX file names, restated here so the tests pin the layout contract
# independently of the loader's own table
TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# synthetic classification task

def gaussian_blob(h, w, cx, cy, sigma):
    yy, xx = np.mgrid[0:h, 0:w]
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma**2))


def blob_class_dataset(n, rng, img=28, split="train", name="mnist"):
    """Ten-way angular-position task: class k puts a bright blob at angle
    2*pi*k/10 around the image center.

    A fixation at the center sees the class directly as the blob's phi row,
    so the pipeline can overfit a handful of samples in a few dozen steps.
    Used wherever a smoke test needs learnable data without real datasets.
    """
    labels = rng.integers(0, 10, size=n).astype(np.int64)
    images = np.zeros((n, 1, img, img), dtype=np.float32)
    c = (img - 1) / 2.0
    radius = img * 0.28
    for i, k in enumerate(labels):
        ang = 2.0 * np.pi * k / 10.0
        cx = c + radius * np.cos(ang) + rng.uniform(-0.7, 0.7)
        cy = c + radius * np.sin(ang) + rng.uniform(-0.7, 0.7)
        images[i, 0] = gaussian_blob(img, img, cx, cy, sigma=1.8)
    return Dataset(images, labels, split, name)


# ---------------------------------------------------------------------------
# on-disk dataset fixtures

def write_idx(images_path, labels_path, images_u8, labels):
    images_u8 = np.ascontiguousarray(images_u8, dtype=np.uint8)
    n, h, w = images_u8.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def make_mnist_layout(root, train_ds, test_ds, name="mnist"):
    """Write two datasets as the IDX tree the loader expects under root."""
    base = root / name
    base.mkdir(parents=True, exist_ok=True)
    pairs = ((train_ds, TRAIN_IMAGES, TRAIN_LABELS), (test_ds, TEST_IMAGES, TEST_LABELS))
    for ds, img_name, lbl_name in pairs:
        u8 = np.round(ds.images[:, 0] * 255.0).astype(np.uint8)
        write_idx(base / img_name, base / lbl_name, u8, ds.labels)
    return root


@pytest.fixture
def synthetic_data_dir(tmp_path):
    """Download-free stand-in for --data-dir: 48 train / 24 test blob images."""
    g = np.random.default_rng(99)
    train = blob_class_dataset(48, g, split="train")
    test = blob_class_dataset(24, g, split="test")
    return make_mnist_layout(tmp_path / "data", train, test)


# ---------------------------------------------------------------------------
# reference image transforms for equivariance checks

def rotate_image(img, pole, alpha):
    """Counterclockwise rotation about pole, bilinear resample, zero-fill."""
    _, h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ca, sa = np.cos(alpha), np.sin(alpha)
    dx, dy = xx - pole[0], yy - pole[1]
    # destination pixel q reads the source at the back-rotated position
    xs = pole[0] + ca * dx + sa * dy
    ys = pole[1] - sa * dx + ca * dy
    return bilinear_sample_field(img[None], xs[None], ys[None])[0]


def scale_image(img, pole, factor):
    """Magnify by factor about pole (factor > 1 enlarges content)."""
    _, h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xs = pole[0] + (xx - pole[0]) / factor
    ys = pole[1] + (yy - pole[1]) / factor
    return bilinear_sample_field(img[None], xs[None], ys[None])[0]


# ---------------------------------------------------------------------------
# acceptance reporting: one visible line per criterion at session end

_ACCEPTANCE_LINES = []


def record_acceptance(line):
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
