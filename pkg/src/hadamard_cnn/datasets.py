"""MNIST (IDX) and CIFAR-10 (binary v1) ingestion, batching and download."""

from __future__ import annotations

import gzip
import hashlib
import logging
import os
import shutil
import struct
import tarfile
import tempfile
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import AvailabilityError, ConfigurationError, DataFormatError, IntegrityError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32
MIRROR_ENV = "HADAMARD_CNN_MIRROR"
DATA_ENV = "HADAMARD_CNN_DATA"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
    "test": ("test_batch.bin",),
}
EXPECTED_COUNTS = {"mnist": {"train": 60000, "test": 10000}, "cifar10": {"train": 50000, "test": 10000}}
EXPECTED_SHAPES = {"mnist": (1, 28, 28), "cifar10": (3, 32, 32)}

# archive name -> md5 of the published archive
MNIST_ARCHIVES = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}
CIFAR_ARCHIVES = {"cifar-10-binary.tar.gz": "c32a1d4ab5d03f1284b67883e8d87530"}
DEFAULT_URLS = {
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "cifar10": "https://www.cs.toronto.edu/~kriz/",
}
CLASS_NAMES = {
    "mnist": tuple(str(d) for d in range(10)),
    "cifar10": ("airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"),
}


@dataclass
class DatasetHandle:
    """Images scaled to [0, 1] as N x C x H x W float32 plus integer labels, per split."""

    name: str
    splits: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def images(self, split: str) -> np.ndarray:
        return self._split(split)[0]

    def labels(self, split: str) -> np.ndarray:
        return self._split(split)[1]

    def size(self, split: str) -> int:
        return len(self._split(split)[1])

    @property
    def split_sizes(self) -> dict[str, int]:
        return {k: len(v[1]) for k, v in self.splits.items()}

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return next(iter(self.splits.values()))[0].shape[1:]

    def subset(self, train: Optional[int] = None, test: Optional[int] = None) -> "DatasetHandle":
        """Leading ``train``/``test`` examples of each split (None keeps all)."""
        limits = {"train": train, "test": test}
        splits = {}
        for key, (x, y) in self.splits.items():
            n = limits.get(key)
            splits[key] = (x[:n], y[:n]) if n is not None else (x, y)
        return DatasetHandle(self.name, splits)

    def _split(self, split: str):
        try:
            return self.splits[split]
        except KeyError:
            raise ConfigurationError(f"dataset {self.name!r} has no split {split!r}") from None


def _open_maybe_gz(path: Path) -> bytes:
    if path.exists():
        return path.read_bytes()
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        with gzip.open(gz, "rb") as f:
            return f.read()
    raise AvailabilityError(f"missing dataset file {path} (run `hadamard-cnn fetch`)")


def parse_idx(buf: bytes, expected_magic: int, source: str = "<bytes>") -> np.ndarray:
    """Decode an IDX container of unsigned bytes into an array."""
    if len(buf) < 8:
        raise DataFormatError(f"{source}: truncated header at offset {len(buf)}")
    magic, count = struct.unpack(">II", buf[:8])
    if magic != expected_magic:
        raise DataFormatError(f"{source}: bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataFormatError(f"{source}: truncated header at offset {len(buf)}")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    expected = int(np.prod(dims)) if dims else 0
    if len(buf) - header < expected:
        raise DataFormatError(f"{source}: truncated data at offset {len(buf)}, need {header + expected} bytes")
    if len(buf) - header > expected:
        raise DataFormatError(f"{source}: {len(buf) - header - expected} trailing bytes after offset {header + expected}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def read_mnist_split(directory: Path, split: str) -> tuple[np.ndarray, np.ndarray]:
    image_name, label_name = MNIST_FILES[split]
    raw_images = parse_idx(_open_maybe_gz(directory / image_name), IDX_IMAGES_MAGIC, image_name)
    labels = parse_idx(_open_maybe_gz(directory / label_name), IDX_LABELS_MAGIC, label_name)
    if raw_images.ndim != 3:
        raise DataFormatError(f"{image_name}: expected 3 dimensions, got {raw_images.ndim}")
    if len(raw_images) != len(labels):
        raise DataFormatError(f"{split}: {len(raw_images)} images but {len(labels)} labels")
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"{label_name}: label {labels.max()} outside 0..9")
    images = raw_images[:, None, :, :].astype(np.float32) / np.float32(255.0)
    return images, labels.astype(np.int64)


def load_mnist(directory) -> DatasetHandle:
    directory = Path(directory)
    return DatasetHandle("mnist", {split: read_mnist_split(directory, split) for split in MNIST_FILES})


def parse_cifar_records(buf: bytes, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    if len(buf) % CIFAR_RECORD_BYTES:
        raise DataFormatError(
            f"{source}: length {len(buf)} is not a multiple of {CIFAR_RECORD_BYTES}; "
            f"partial record at offset {len(buf) - len(buf) % CIFAR_RECORD_BYTES}"
        )
    records = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DataFormatError(f"{source}: label {labels[bad]} at offset {bad * CIFAR_RECORD_BYTES}")
    # records are channel-planar: 1024 red, 1024 green, 1024 blue, each row-major
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / np.float32(255.0)
    return images, labels


def _cifar_dir(directory: Path) -> Path:
    nested = directory / "cifar-10-batches-bin"
    return nested if nested.is_dir() else directory


def load_cifar10(directory) -> DatasetHandle:
    directory = _cifar_dir(Path(directory))
    splits = {}
    for split, names in CIFAR_FILES.items():
        parts = []
        for name in names:
            path = directory / name
            if not path.exists():
                raise AvailabilityError(f"missing dataset file {path} (run `hadamard-cnn fetch`)")
            parts.append(parse_cifar_records(path.read_bytes(), name))
        splits[split] = (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
    return DatasetHandle("cifar10", splits)


def load(name: str, directory) -> DatasetHandle:
    if name == "mnist":
        return load_mnist(directory)
    if name == "cifar10":
        return load_cifar10(directory)
    raise ConfigurationError(f"unknown dataset {name!r}")


def num_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def batches(images: np.ndarray, labels: np.ndarray, batch_size: int,
            rng: Optional[np.random.Generator] = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Mini-batches over a permutation drawn from ``rng`` (input order if None).

    The last batch may be short; exactly ceil(N / batch_size) batches are produced.
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch size must be >= 1, got {batch_size}")
    n = len(labels)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield images[idx], labels[idx]


# ------------------------------------------------------------------ fetching


def _md5(path: Path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _expected_sizes(name: str) -> dict[str, int]:
    if name == "mnist":
        sizes = {}
        for split, (img, lab) in MNIST_FILES.items():
            n = EXPECTED_COUNTS["mnist"][split]
            sizes[img] = 16 + n * 28 * 28
            sizes[lab] = 8 + n
        return sizes
    return {f"cifar-10-batches-bin/{f}": 10000 * CIFAR_RECORD_BYTES for files in CIFAR_FILES.values() for f in files}


@dataclass(frozen=True)
class Manifest:
    """What a download must deliver: archive md5s and unpacked file sizes (relative paths)."""

    archives: dict[str, str]
    files: dict[str, int]


MANIFESTS = {
    "mnist": Manifest(MNIST_ARCHIVES, _expected_sizes("mnist")),
    "cifar10": Manifest(CIFAR_ARCHIVES, _expected_sizes("cifar10")),
}


def is_cached(name: str, directory, manifest: Optional[Manifest] = None) -> bool:
    directory = Path(directory)
    manifest = manifest or MANIFESTS[name]
    for rel, size in manifest.files.items():
        path = directory / rel
        if not path.exists():
            path = directory / Path(rel).name
        if not path.exists() or path.stat().st_size != size:
            return False
    return True


def _download(url: str, dest: Path, timeout: float) -> None:
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp, open(dest, "wb") as out:
            shutil.copyfileobj(resp, out)
    except (urllib.error.URLError, OSError) as exc:
        raise AvailabilityError(f"cannot download {url}: {exc}") from exc


def fetch(name: str, directory, url: Optional[str] = None, timeout: float = 60.0,
          manifest: Optional[Manifest] = None) -> bool:
    """Download, verify and unpack a dataset into ``directory``.

    Returns False without touching the network when valid files are already
    present. ``url`` (or the mirror environment variable) replaces the
    canonical base URL.
    """
    if name not in DEFAULT_URLS:
        raise ConfigurationError(f"unknown dataset {name!r}")
    manifest = manifest or MANIFESTS[name]
    directory = Path(directory)
    if is_cached(name, directory, manifest):
        logger.info("%s already present in %s", name, directory)
        return False
    base = url or os.environ.get(MIRROR_ENV) or DEFAULT_URLS[name]
    if not base.endswith("/"):
        base += "/"
    directory.mkdir(parents=True, exist_ok=True)
    archives = manifest.archives
    with tempfile.TemporaryDirectory(dir=directory) as tmp:
        tmp = Path(tmp)
        for archive, md5 in archives.items():
            target = tmp / archive
            logger.info("downloading %s%s", base, archive)
            _download(base + archive, target, timeout)
            digest = _md5(target)
            if digest != md5:
                raise IntegrityError(f"{archive}: md5 {digest} does not match published {md5}")
        written = []
        try:
            for archive in archives:
                if name == "mnist":
                    out = directory / archive[: -len(".gz")]
                    written.append(out)
                    with gzip.open(tmp / archive, "rb") as src, open(out, "wb") as dst:
                        shutil.copyfileobj(src, dst)
                else:
                    with tarfile.open(tmp / archive, "r:gz") as tar:
                        members = [m for m in tar.getmembers() if m.isfile()]
                        written.extend(directory / m.name for m in members)
                        tar.extractall(directory, members=members)
        except (OSError, EOFError, tarfile.TarError) as exc:
            for path in written:
                path.unlink(missing_ok=True)
            raise IntegrityError(f"cannot unpack {name}: {exc}") from exc
    if not is_cached(name, directory, manifest):
        raise IntegrityError(f"{name}: unpacked files do not have the expected sizes")
    return True


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_ENV, "data"))
