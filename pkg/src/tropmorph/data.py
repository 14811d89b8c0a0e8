"""Dataset ingestion: IDX image/label containers, splits, bootstrap
sampling, and synthetic classification blobs.

IDX files (the MNIST / FashionMNIST container) start with a big-endian
uint32 magic (0x803 for 3-D image tensors, 0x801 for label vectors),
followed by big-endian uint32 dimension sizes and raw unsigned bytes.
Gzipped files are detected by their two magic bytes and decompressed
transparently.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

DATA_ROOT_ENV = "TROPMORPH_DATA"


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray  # (N, n) float64
    labels: np.ndarray  # (N,) int64
    name: str = ""
    norm: dict = field(default_factory=dict)  # record of the normalization applied

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if len(self.features) != len(self.labels):
            raise ValueError(f"{len(self.features)} feature rows vs {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def take(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.features[idx], self.labels[idx], name or self.name, dict(self.norm))


def normalize(ds: Dataset, scale: float, offset: float = 0.0) -> Dataset:
    """Apply x -> x*scale + offset once; re-applying the recorded
    normalization is a no-op (idempotent)."""
    record = {"scale": float(scale), "offset": float(offset)}
    if ds.norm == record:
        return ds
    out = Dataset(ds.features * scale + offset, ds.labels, ds.name, record)
    return out


def _read_exact(f, size: int, what: str) -> bytes:
    buf = f.read(size)
    if len(buf) != size:
        raise IdxFormatError(f"truncated IDX file while reading {what}")
    return buf


def _open_maybe_gzip(path: str):
    with open(path, "rb") as probe:
        magic = probe.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(image_path: str, label_path: str, name: str = "") -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1] by /255 and
    images flattened row-major."""
    with _open_maybe_gzip(image_path) as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(f"bad image magic 0x{magic:08x} in {image_path}")
        pixels = np.frombuffer(_read_exact(f, count * rows * cols, "pixels"), dtype=np.uint8)
    with _open_maybe_gzip(label_path) as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(f"bad label magic 0x{magic:08x} in {label_path}")
        labels = np.frombuffer(_read_exact(f, label_count, "labels"), dtype=np.uint8)
    if count != label_count:
        raise IdxFormatError(f"image count {count} != label count {label_count}")
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), name or os.path.basename(image_path), {"scale": 1 / 255.0, "offset": 0.0})


def write_idx(images: np.ndarray, labels: np.ndarray, image_path: str, label_path: str) -> None:
    """Write uint8 images of shape (N, rows, cols) and labels (N,) as an IDX
    pair; paths ending in .gz are gzip-compressed."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or len(images) != len(labels):
        raise ValueError("expected (N, rows, cols) images and matching labels")

    def _writer(path):
        return gzip.open(path, "wb") if path.endswith(".gz") else open(path, "wb")

    with _writer(image_path) as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, len(images), images.shape[1], images.shape[2]))
        f.write(images.tobytes())
    with _writer(label_path) as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def bootstrap_sample(ds: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Stratified sampling with replacement, total size round(fraction * N),
    class counts proportional (largest remainder) with at least one sample
    per source class.  Deterministic under seed."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if len(ds) == 0:
        raise ValueError("cannot bootstrap an empty dataset")
    classes = ds.classes
    size = int(round(fraction * len(ds)))
    if size < len(classes):
        raise ValueError(f"sample size {size} cannot cover {len(classes)} classes")
    shares = np.array([(ds.labels == c).sum() for c in classes], dtype=np.float64)
    quota = shares / shares.sum() * size
    counts = np.floor(quota).astype(int)
    counts = np.maximum(counts, 1)
    remainder = np.argsort(-(quota - np.floor(quota)), kind="stable")
    i = 0
    while counts.sum() < size:
        counts[remainder[i % len(classes)]] += 1
        i += 1
    while counts.sum() > size:  # the min-1 rule can overshoot
        j = int(np.argmax(counts))
        counts[j] -= 1
    rng = np.random.default_rng(seed)
    picks = []
    for c, k in zip(classes, counts):
        idx = np.flatnonzero(ds.labels == c)
        picks.append(rng.choice(idx, size=k, replace=True))
    order = np.concatenate(picks)
    return ds.take(order, name=f"{ds.name}[boot]")


def train_test_split(ds: Dataset, train_size: int, test_size: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Disjoint stratified split with the requested sizes (proportional class
    allocation, largest remainder)."""
    if train_size + test_size > len(ds):
        raise ValueError(f"split sizes {train_size}+{test_size} exceed dataset size {len(ds)}")
    rng = np.random.default_rng(seed)
    classes = ds.classes
    shares = np.array([(ds.labels == c).sum() for c in classes], dtype=np.float64)

    def allocate(total):
        quota = shares / shares.sum() * total
        counts = np.floor(quota).astype(int)
        remainder = np.argsort(-(quota - np.floor(quota)), kind="stable")
        i = 0
        while counts.sum() < total:
            counts[remainder[i % len(classes)]] += 1
            i += 1
        return counts

    train_counts = allocate(train_size)
    test_counts = allocate(test_size)
    train_idx, test_idx = [], []
    for c, tr, te in zip(classes, train_counts, test_counts):
        idx = np.flatnonzero(ds.labels == c)
        if tr + te > len(idx):
            raise ValueError(f"class {c} has only {len(idx)} samples, needs {tr + te}")
        perm = rng.permutation(idx)
        train_idx.append(perm[:tr])
        test_idx.append(perm[tr : tr + te])
    return (
        ds.take(np.concatenate(train_idx), name=f"{ds.name}[train]"),
        ds.take(np.concatenate(test_idx), name=f"{ds.name}[test]"),
    )


def subset_by_classes(ds: Dataset, pair: tuple[int, int]) -> Dataset:
    """Restrict to two classes, order preserved, labels remapped to {-1, +1}
    with the smaller class index mapping to -1."""
    a, b = pair
    if a == b:
        raise ValueError(f"class pair must be distinct, got ({a}, {b})")
    lo, hi = min(a, b), max(a, b)
    mask = (ds.labels == lo) | (ds.labels == hi)
    if not mask.any():
        raise ValueError(f"no samples of classes {lo} or {hi}")
    sub = ds.take(np.flatnonzero(mask), name=f"{ds.name}[{lo}v{hi}]")
    sub.labels = np.where(sub.labels == lo, -1, 1)
    return sub


def gaussian_blobs(n_per_class: int, centers, std: float = 1.0, seed: int = 0, name: str = "blobs") -> Dataset:
    """K Gaussian clusters, labels 0..K-1; a quick synthetic classification set."""
    rng = np.random.default_rng(seed)
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    feats, labs = [], []
    for k, c in enumerate(centers):
        feats.append(rng.normal(0.0, std, size=(n_per_class, centers.shape[1])) + c[None, :])
        labs.append(np.full(n_per_class, k))
    return Dataset(np.concatenate(feats), np.concatenate(labs), name)


def data_root(default: str | None = None) -> str | None:
    """Dataset root directory: the TROPMORPH_DATA env var, else the default."""
    return os.environ.get(DATA_ROOT_ENV, default)


def find_mnist(root: str) -> tuple[str, str] | None:
    """Locate an MNIST-style IDX pair under `root` (plain or gzipped)."""
    candidates = [
        ("mnist10k-images-idx3-ubyte.gz", "mnist10k-labels-idx1-ubyte.gz"),
        ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ]
    for img, lab in candidates:
        ip, lp = os.path.join(root, img), os.path.join(root, lab)
        if os.path.exists(ip) and os.path.exists(lp):
            return ip, lp
    return None
