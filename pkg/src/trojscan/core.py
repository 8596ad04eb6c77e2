"""Shared domain types: image tensors, labeled datasets, and seedable RNG streams.

Pixels are stored as float64 in [0, 1]; file formats quantize where noted.
All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _png

ClassLabel = int

_MASK64 = (1 << 64) - 1

TENSOR_FILE_MAGIC = b"TDK1"


class ImageTensor:
    """An H x W x C grid of pixel values in [0, 1].

    Channels must be 1 (grayscale) or 3 (RGB, blue last). Construction
    rejects out-of-range or non-finite pixels; the backing array is
    read-only afterwards.
    """

    __slots__ = ("pixels",)

    def __init__(self, pixels) -> None:
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise ValueError(f"expected HxWxC pixel grid, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise ValueError(f"empty image shape {arr.shape}")
        if c not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {c}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("pixels must be finite")
        if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
            raise ValueError("pixels must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    def __setattr__(self, name, value):
        raise AttributeError("ImageTensor is immutable")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape

    def __repr__(self) -> str:
        return f"ImageTensor({self.height}x{self.width}x{self.channels})"


@dataclass(frozen=True)
class LabeledDataset:
    """Stacked images (N, H, W, C) with integer labels in [0, class_count)."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must be (N, H, W, C), got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ValueError("labels must be one per image")
        if images.shape[0] and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError("pixels must lie in [0, 1]")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")
        images = images.copy()
        labels = labels.copy()
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[ImageTensor, int]], class_count: int) -> "LabeledDataset":
        pairs = list(pairs)
        if not pairs:
            raise ValueError("dataset must not be empty")
        images = np.stack([p.pixels for p, _ in pairs])
        labels = np.array([lab for _, lab in pairs], dtype=np.int64)
        return cls(images, labels, class_count)

    def __len__(self) -> int:
        return self.images.shape[0]

    def tensor(self, index: int) -> ImageTensor:
        return ImageTensor(self.images[index])

    def label(self, index: int) -> int:
        return int(self.labels[index])

    def items(self) -> Iterator[tuple[ImageTensor, int]]:
        for i in range(len(self)):
            yield self.tensor(i), self.label(i)

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx], self.class_count)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]


@dataclass(frozen=True)
class RngStream:
    """Handle for a counter-based random stream.

    Identical (seed, stream_id) pairs reproduce the identical value
    sequence; distinct stream ids are statistically independent, so
    substreams may be consumed in any order (or in parallel) without
    changing results.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not 0 <= self.stream_id <= _MASK64:
            raise ValueError("stream_id must be a 64-bit unsigned integer")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def _mix64(base: int, salt: int) -> int:
    # splitmix64 finalizer; makes derived ids well-spread and non-invertible
    x = (base + 0x9E3779B97F4A7C15 * (salt + 1)) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def substream(root: RngStream, index: int) -> RngStream:
    """Derive the index-th child stream of ``root`` deterministically."""
    if index < 0:
        raise ValueError("substream index must be non-negative")
    return RngStream(root.seed, _mix64(root.stream_id, index))


def substream_named(root: RngStream, name: str) -> RngStream:
    """Derive a child stream keyed by a stable text label."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    salt = int.from_bytes(digest[:8], "little")
    return RngStream(root.seed, _mix64(root.stream_id, salt))


# ---------------------------------------------------------------------------
# Dataset files.
#
# Two interchangeable forms:
#   * single binary tensor file: magic "TDK1", u32 count/H/W/C/K, then
#     count x (H*W*C float32 + u32 label), all little-endian;
#   * directory with manifest.csv rows "path,label" pointing at .png
#     (8-bit, round-half-even quantized) or .npy (raw float) images.
# ---------------------------------------------------------------------------


def save_tensor_file(dataset: LabeledDataset, path) -> None:
    path = Path(path)
    n = len(dataset)
    h, w, c = dataset.image_shape
    with open(path, "wb") as fh:
        fh.write(TENSOR_FILE_MAGIC)
        fh.write(struct.pack("<5I", n, h, w, c, dataset.class_count))
        for i in range(n):
            fh.write(dataset.images[i].astype("<f4").tobytes())
            fh.write(struct.pack("<I", dataset.label(i)))


def load_tensor_file(path) -> LabeledDataset:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TENSOR_FILE_MAGIC:
            raise ValueError(f"{path}: not a tensor dataset file (bad magic {magic!r})")
        n, h, w, c, k = struct.unpack("<5I", fh.read(20))
        images = np.empty((n, h, w, c), dtype=np.float64)
        labels = np.empty(n, dtype=np.int64)
        pixel_bytes = h * w * c * 4
        for i in range(n):
            raw = fh.read(pixel_bytes)
            if len(raw) != pixel_bytes:
                raise ValueError(f"{path}: truncated at item {i}")
            images[i] = np.frombuffer(raw, dtype="<f4").reshape(h, w, c)
            (labels[i],) = struct.unpack("<I", fh.read(4))
    return LabeledDataset(images, labels, k)


def image_to_bytes(x: ImageTensor) -> np.ndarray:
    """Quantize to 8-bit with round-half-even (file I/O convention)."""
    return np.rint(x.pixels * 255.0).astype(np.uint8)


def image_from_bytes(data: np.ndarray) -> ImageTensor:
    return ImageTensor(np.asarray(data, dtype=np.float64) / 255.0)


def save_manifest_dir(dataset: LabeledDataset, directory, image_format: str = "png") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(len(dataset)):
        name = f"img_{i:05d}.{image_format}"
        target = directory / name
        if image_format == "png":
            _png.write_png(target, image_to_bytes(dataset.tensor(i)))
        elif image_format == "npy":
            np.save(target, dataset.images[i])
        else:
            raise ValueError(f"unsupported image format {image_format!r}")
        rows.append((name, dataset.label(i)))
    with open(directory / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label"])
        for name, label in rows:
            writer.writerow([name, label])


def load_manifest_dir(manifest_path, class_count: int | None = None) -> LabeledDataset:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.csv"
    base = manifest_path.parent
    pairs: list[tuple[ImageTensor, int]] = []
    with open(manifest_path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].strip().lower() == "path":
                continue
            rel, label = row[0].strip(), int(row[1])
            target = base / rel
            if target.suffix.lower() == ".png":
                tensor = image_from_bytes(_png.read_png(target))
            elif target.suffix.lower() == ".npy":
                tensor = ImageTensor(np.load(target))
            else:
                raise ValueError(f"unsupported image file {target}")
            pairs.append((tensor, label))
    if not pairs:
        raise ValueError(f"{manifest_path}: empty manifest")
    if class_count is None:
        class_count = max(label for _, label in pairs) + 1
    return LabeledDataset.from_pairs(pairs, class_count)


def load_dataset(path, class_count: int | None = None) -> LabeledDataset:
    """Load either dataset form based on what the path points at."""
    path = Path(path)
    if path.is_dir() or path.suffix.lower() == ".csv":
        return load_manifest_dir(path, class_count)
    return load_tensor_file(path)
