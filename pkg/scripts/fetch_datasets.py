#!/usr/bin/env python3
"""Download MNIST, Fashion-MNIST and CIFAR-10 into the layout the trainer
expects (run this on a machine with network access, then copy the tree):

    data/
      mnist/            train-images-idx3-ubyte.gz  train-labels-idx1-ubyte.gz
                        t10k-images-idx3-ubyte.gz   t10k-labels-idx1-ubyte.gz
      fashion_mnist/    (same four names)
      cifar10/cifar-10-batches-bin/  data_batch_1..5.bin  test_batch.bin

After each download the archive is opened with the package's own loaders, so
a truncated or corrupted file fails loudly here rather than mid-training.
"""

import argparse
import sys
import tarfile
import tempfile
import urllib.request
from pathlib import Path

IDX_NAMES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)

SOURCES = {
    "mnist": [f"https://ossci-datasets.s3.amazonaws.com/mnist/{n}" for n in IDX_NAMES],
    "fashion_mnist": [
        f"http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/{n}"
        for n in IDX_NAMES
    ],
    "cifar10": ["https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"],
}


def download(url: str, dest: Path) -> None:
    if dest.exists() and dest.stat().st_size > 0:
        print(f"  {dest.name}: already present")
        return
    print(f"  {url}")
    tmp = dest.with_suffix(dest.suffix + ".part")
    with urllib.request.urlopen(url, timeout=60) as resp, open(tmp, "wb") as f:
        while chunk := resp.read(1 << 20):
            f.write(chunk)
    tmp.rename(dest)
    print(f"  -> {dest} ({dest.stat().st_size / 1e6:.1f} MB)")


def fetch_idx(name: str, root: Path) -> None:
    out = root / name
    out.mkdir(parents=True, exist_ok=True)
    for url in SOURCES[name]:
        download(url, out / url.rsplit("/", 1)[1])


def fetch_cifar10(root: Path) -> None:
    out = root / "cifar10"
    out.mkdir(parents=True, exist_ok=True)
    if (out / "cifar-10-batches-bin" / "test_batch.bin").exists():
        print("  cifar-10-batches-bin: already present")
        return
    with tempfile.TemporaryDirectory() as td:
        tarball = Path(td) / "cifar-10-binary.tar.gz"
        download(SOURCES["cifar10"][0], tarball)
        with tarfile.open(tarball) as tf:
            members = [m for m in tf.getmembers()
                       if m.isfile() and m.name.endswith(".bin")]
            for m in members:
                # flatten to cifar-10-batches-bin/<basename>
                m.name = "cifar-10-batches-bin/" + Path(m.name).name
            tf.extractall(out, members=members)
    print(f"  -> {out / 'cifar-10-batches-bin'}")


def validate(name: str, root: Path) -> None:
    try:
        from retinotopic.data import load_dataset
    except ImportError:
        sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
        from retinotopic.data import load_dataset

    for split in ("train", "test"):
        ds = load_dataset(name, root, split)
        print(f"  {name}/{split}: {ds.images.shape} labels {ds.labels.min()}..{ds.labels.max()}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("names", nargs="*", default=list(SOURCES),
                        help="datasets to fetch (default: all)")
    parser.add_argument("--data-dir", default="data", help="target root (default ./data)")
    args = parser.parse_args()

    root = Path(args.data_dir)
    for name in args.names or list(SOURCES):
        if name not in SOURCES:
            parser.error(f"unknown dataset {name!r} (choose from {', '.join(SOURCES)})")
        print(f"{name}:")
        fetch_cifar10(root) if name == "cifar10" else fetch_idx(name, root)
        validate(name, root)
    return 0


if __name__ == "__main__":
    sys.exit(main())
