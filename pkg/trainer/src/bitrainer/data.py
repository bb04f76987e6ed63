"""Dataset ingestion and decomposition.

Reads the standard public archive formats from a local directory (IDX for
mnist, python pickles for cifar-10/100), normalizes by the training split's
per-channel mean/std, and decomposes every image into the exact center
quarter plus the zero-filled, noise-perturbed remainder. Raises an
ingestion error with download instructions when the files are absent.

`digits` is a bundled surrogate corpus (real handwritten digits shipped
with scikit-learn, upsampled to 28x28) so the full pipeline can run on
machines without the archives.
"""

from __future__ import annotations

import gzip
import os
import pickle
import struct
from dataclasses import dataclass

import numpy as np

DATASETS = ("mnist", "cifar10", "cifar100", "digits")

_DOWNLOAD_HELP = {
    "mnist": (
        "expected IDX files train-images-idx3-ubyte[.gz], train-labels-idx1-ubyte[.gz], "
        "t10k-images-idx3-ubyte[.gz], t10k-labels-idx1-ubyte[.gz] under {path}; "
        "download them from a MNIST mirror (e.g. "
        "https://ossci-datasets.s3.amazonaws.com/mnist/) and place them there"
    ),
    "cifar10": (
        "expected the extracted cifar-10-batches-py/ directory under {path}; download "
        "cifar-10-python.tar.gz from https://www.cs.toronto.edu/~kriz/cifar.html and untar it"
    ),
    "cifar100": (
        "expected the extracted cifar-100-python/ directory under {path}; download "
        "cifar-100-python.tar.gz from https://www.cs.toronto.edu/~kriz/cifar.html and untar it"
    ),
}


class IngestionError(ValueError):
    pass


@dataclass
class DatasetSplits:
    """Decomposed train/test splits plus the stats the archive records."""

    name: str
    train_sensitive: np.ndarray
    train_plain: np.ndarray
    train_full: np.ndarray       # normalized full images (teacher input)
    train_labels: np.ndarray
    test_sensitive: np.ndarray
    test_plain: np.ndarray
    test_full: np.ndarray
    test_labels: np.ndarray
    mean: np.ndarray             # per channel
    std: np.ndarray
    n_classes: int

    @property
    def image_shape(self):
        return self.train_full.shape[1:]


def _open_maybe_gz(path):
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path: str) -> np.ndarray:
    """Parse an IDX file (the mnist container format)."""
    with _open_maybe_gz(path) as fh:
        magic = struct.unpack(">HBB", fh.read(4))
        zero, dtype_code, ndim = magic
        if zero != 0 or dtype_code != 0x08:
            raise IngestionError(f"{path}: not an unsigned-byte IDX file")
        dims = struct.unpack(">" + "I" * ndim, fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise IngestionError(f"{path}: payload size does not match header {dims}")
    return data.reshape(dims)


def _find(path_dir, stem):
    for name in (stem, stem + ".gz"):
        candidate = os.path.join(path_dir, name)
        if os.path.exists(candidate):
            return candidate
    return None


def _load_mnist(data_dir):
    root = os.path.join(data_dir, "mnist") if os.path.isdir(os.path.join(data_dir, "mnist")) else data_dir
    stems = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
    paths = [_find(root, s) for s in stems]
    if any(p is None for p in paths):
        raise IngestionError("mnist: " + _DOWNLOAD_HELP["mnist"].format(path=root))
    xtr = read_idx(paths[0]).astype(np.float64)[:, None] / 255.0
    ytr = read_idx(paths[1]).astype(np.int64)
    xte = read_idx(paths[2]).astype(np.float64)[:, None] / 255.0
    yte = read_idx(paths[3]).astype(np.int64)
    return xtr, ytr, xte, yte, 10


def _load_cifar(data_dir, fine):
    sub = "cifar-100-python" if fine else "cifar-10-batches-py"
    root = os.path.join(data_dir, sub)
    if not os.path.isdir(root):
        key = "cifar100" if fine else "cifar10"
        raise IngestionError(f"{key}: " + _DOWNLOAD_HELP[key].format(path=data_dir))

    def unpickle(name):
        with open(os.path.join(root, name), "rb") as fh:
            return pickle.load(fh, encoding="bytes")

    if fine:
        tr = unpickle("train")
        te = unpickle("test")
        xtr, ytr = tr[b"data"], tr[b"fine_labels"]
        xte, yte = te[b"data"], te[b"fine_labels"]
        n_classes = 100
    else:
        parts = [unpickle(f"data_batch_{i}") for i in range(1, 6)]
        xtr = np.concatenate([p[b"data"] for p in parts])
        ytr = sum((list(p[b"labels"]) for p in parts), [])
        te = unpickle("test_batch")
        xte, yte = te[b"data"], te[b"labels"]
        n_classes = 10
    xtr = xtr.reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    xte = np.asarray(xte).reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return xtr, np.asarray(ytr, dtype=np.int64), xte, np.asarray(yte, dtype=np.int64), n_classes


def _load_digits_surrogate():
    from sklearn.datasets import load_digits

    data = load_digits()
    imgs = np.kron(data.images / 16.0, np.ones((4, 4)))[:, 2:30, 2:30][:, None]
    labels = data.target.astype(np.int64)
    split = 1437  # ~80/20, fixed
    return imgs[:split], labels[:split], imgs[split:], labels[split:], 10


def decompose(images: np.ndarray, sigma: float, rng: np.random.Generator):
    """Center-quarter split: (sensitive, plain_full) per image."""
    n, c, h, w = images.shape
    if h % 2 or w % 2:
        raise IngestionError(f"image sides must be even, got {h}x{w}")
    hs, ws = h // 2, w // 2
    r0, c0 = (h - hs) // 2, (w - ws) // 2
    sensitive = images[:, :, r0:r0 + hs, c0:c0 + ws].copy()
    plain = images + rng.normal(0.0, sigma, size=images.shape) if sigma > 0 else images.copy()
    plain[:, :, r0:r0 + hs, c0:c0 + ws] = 0.0
    return sensitive, plain


def prepare_dataset(name: str, data_dir: str = "data", noise_sigma: float = 0.1,
                    seed: int = 0) -> DatasetSplits:
    """Load, normalize, and decompose a dataset; deterministic given seed."""
    name = name.lower()
    if name == "mnist":
        xtr, ytr, xte, yte, n_classes = _load_mnist(data_dir)
    elif name == "cifar10":
        xtr, ytr, xte, yte, n_classes = _load_cifar(data_dir, fine=False)
    elif name == "cifar100":
        xtr, ytr, xte, yte, n_classes = _load_cifar(data_dir, fine=True)
    elif name == "digits":
        xtr, ytr, xte, yte, n_classes = _load_digits_surrogate()
    else:
        raise IngestionError(f"unknown dataset {name!r}; choose from {DATASETS}")

    mean = xtr.mean(axis=(0, 2, 3))
    std = xtr.std(axis=(0, 2, 3))
    std[std == 0] = 1.0
    xtr = (xtr - mean[:, None, None]) / std[:, None, None]
    xte = (xte - mean[:, None, None]) / std[:, None, None]

    rng = np.random.default_rng(seed)
    tr_sens, tr_plain = decompose(xtr, noise_sigma, rng)
    te_sens, te_plain = decompose(xte, noise_sigma, rng)
    return DatasetSplits(
        name=name,
        train_sensitive=tr_sens, train_plain=tr_plain, train_full=xtr, train_labels=ytr,
        test_sensitive=te_sens, test_plain=te_plain, test_full=xte, test_labels=yte,
        mean=mean, std=std, n_classes=n_classes,
    )
