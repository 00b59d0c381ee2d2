"""CIFAR-10 ingestion, pixel normalization and batch iteration."""

from __future__ import annotations

import hashlib
import os
import tarfile
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

MAX_PIXEL = 255
RECORD_BYTES = 1 + 32 * 32 * 3
RECORDS_PER_FILE = 10000
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)
CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
DATA_ROOT_ENV = "CIFAR10_ROOT"


class DataFormatError(ValueError):
    """A dataset file is missing, truncated or malformed."""


class ValidationError(ValueError):
    """Pixel values fall outside the declared range."""


@dataclass
class Dataset:
    """Images stored as uint8 ``[N, H, W, 3]`` in pixel space."""

    images: np.ndarray
    split: str
    name: str = "cifar10"
    files: tuple[str, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.images)

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.images).tobytes()).hexdigest()

    def subset(self, indices) -> "Dataset":
        return Dataset(self.images[np.asarray(indices, dtype=np.intp)], self.split, self.name, self.files)


def default_root() -> Path | None:
    root = os.environ.get(DATA_ROOT_ENV)
    return Path(root) if root else None


def _resolve_root(root_path: str | os.PathLike) -> Path:
    root = Path(root_path)
    # accept the directory that contains the extracted archive as well
    nested = root / "cifar-10-batches-bin"
    if not (root / TEST_FILES[0]).exists() and nested.is_dir():
        return nested
    return root


def download_cifar10(root_path: str | os.PathLike) -> Path:
    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)
    archive = root / "cifar-10-binary.tar.gz"
    if not archive.exists():
        urllib.request.urlretrieve(CIFAR10_URL, archive)
    with tarfile.open(archive) as tar:
        tar.extractall(root)
    return root / "cifar-10-batches-bin"


def read_batch_file(path: Path) -> np.ndarray:
    """Read one CIFAR-10 binary batch into uint8 ``[N, 32, 32, 3]``.

    Records are one label byte followed by 3072 channel-planar pixel bytes.
    Labels are dropped.
    """
    if not path.exists():
        raise DataFormatError(f"missing CIFAR-10 batch file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES:
        raise DataFormatError(
            f"{path}: size {raw.size} is not a multiple of the {RECORD_BYTES}-byte record"
        )
    records = raw.reshape(-1, RECORD_BYTES)
    if len(records) != RECORDS_PER_FILE:
        raise DataFormatError(
            f"{path}: expected {RECORDS_PER_FILE} records, found {len(records)}"
        )
    planar = records[:, 1:].reshape(-1, 3, 32, 32)
    return np.ascontiguousarray(planar.transpose(0, 2, 3, 1))


def load_cifar10(root_path: str | os.PathLike | None = None, split: str = "train",
                 download: bool = False) -> Dataset:
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}; expected 'train' or 'test'")
    if root_path is None:
        root_path = default_root()
        if root_path is None:
            raise DataFormatError(
                f"no dataset root given and ${DATA_ROOT_ENV} is not set"
            )
    root = _resolve_root(root_path)
    names = TRAIN_FILES if split == "train" else TEST_FILES
    if download and not all((root / n).exists() for n in names):
        root = download_cifar10(root_path)
    images = np.concatenate([read_batch_file(root / n) for n in names])
    return Dataset(images, split, files=tuple(str(root / n) for n in names))


def normalize(x: np.ndarray) -> np.ndarray:
    """Map integer pixels in [0, 255] to float32 in [0, 1]."""
    x = np.asarray(x)
    if x.size and (x.min() < 0 or x.max() > MAX_PIXEL):
        raise ValidationError(
            f"pixel values must lie in [0, {MAX_PIXEL}], got [{x.min()}, {x.max()}]"
        )
    return x.astype(np.float32) / MAX_PIXEL


def denormalize(x: np.ndarray, rounding: bool = True) -> np.ndarray:
    """Map [0, 1] values back to pixel space.

    Values are clamped to [0, 1] first; with ``rounding`` the result is
    rounded half-up to uint8.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size and not np.all(np.isfinite(x)):
        raise ValidationError("non-finite values cannot be denormalized")
    scaled = np.clip(x, 0.0, 1.0) * MAX_PIXEL
    if not rounding:
        return scaled
    return np.floor(scaled + 0.5).astype(np.uint8)


def batch_iterator(dataset: Dataset | np.ndarray, batch_size: int, shuffle: bool = False,
                   seed: int = 0, drop_last: bool = False) -> Iterator[np.ndarray]:
    """Yield uint8 image batches covering the dataset once.

    Each call owns its generator, so two iterators never share cursor state.
    """
    if batch_size <= 0:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    images = dataset.images if isinstance(dataset, Dataset) else np.asarray(dataset)
    n = len(images)
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    stop = n - n % batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        yield images[order[start:start + batch_size]]


def num_batches(n: int, batch_size: int, drop_last: bool = False) -> int:
    return n // batch_size if drop_last else -(-n // batch_size)


def train_val_split(dataset: Dataset, val_fraction: float = 0.02,
                    seed: int = 0) -> tuple[Dataset, Dataset]:
    """Hold out a seeded fraction of the images for early stopping."""
    n = len(dataset)
    n_val = int(round(n * val_fraction))
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(order[n_val:])), dataset.subset(np.sort(order[:n_val]))


def pad_to_multiple(image: np.ndarray, multiple: int = 4) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad an ``[H, W, 3]`` image so H and W are multiples of ``multiple``."""
    h, w = image.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        mode = "reflect" if h > ph and w > pw else "symmetric"
        image = np.pad(image, ((0, ph), (0, pw), (0, 0)), mode=mode)
    return image, (h, w)


def load_image(path: str | os.PathLike) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(path: str | os.PathLike, image: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)
