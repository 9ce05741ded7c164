"""Image/dataset types, the synthetic grating generator and the LPDS file format.

LPDS layout (all little-endian)::

    bytes 0-3    magic b"LPDS"
    byte  4      version (1)
    byte  5      split tag (0 = train, 1 = test)
    bytes 6-15   reserved, zero
    5 x u32      H, W, C, K, N
    N records    u32 label, then H*W*C float32 intensities in (row, col, channel) order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, InvalidConfigError

MAGIC = b"LPDS"
VERSION = 1
SPLITS = ("train", "test")

_HEADER = struct.Struct("<4sBB10x")
_DIMS = struct.Struct("<5I")

# 4 orientations x 2 spatial frequencies
MAX_CLASSES = 8
_ORIENTATIONS = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)
_FREQUENCIES = (2.0, 4.0)


def _check_unit_range(data: np.ndarray) -> None:
    if data.size and not (np.all(np.isfinite(data)) and data.min() >= 0.0 and data.max() <= 1.0):
        raise ValueError("image intensities must lie in [0, 1]")


@dataclass(frozen=True)
class Image:
    """A single H x W x C image with intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"image must be H x W x C, got shape {arr.shape}")
        _check_unit_range(arr)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)


@dataclass(frozen=True)
class LabeledExample:
    image: Image
    label: int


@dataclass(frozen=True)
class Perturbation:
    """A perturbation together with the (p, epsilon) budget it was generated under."""

    delta: np.ndarray
    p: float
    epsilon: float

    def check_feasible(self, x: np.ndarray, rtol: float = 1e-6) -> None:
        from .geometry import lp_norm

        if self.delta.shape != np.shape(x):
            raise ValueError("perturbation shape does not match image")
        norm = lp_norm(self.delta.reshape(-1), self.p)
        if norm > self.epsilon * (1 + rtol):
            raise ValueError(f"l{self.p} norm {norm} exceeds budget {self.epsilon}")
        adv = np.asarray(x, dtype=np.float64) + self.delta
        if adv.min() < 0.0 or adv.max() > 1.0:
            raise ValueError("x + delta leaves the [0, 1] box")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Images stored as one (N, H, W, C) float32 array, labels as int64."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    _meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must be (N, H, W, C), got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ValueError("one label per image required")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("label out of range [0, K)")
        _check_unit_range(images)
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.images.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.split == other.split
            and self.images.shape == other.images.shape
            and np.array_equal(self.images, other.images)
            and np.array_equal(self.labels, other.labels)
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    @property
    def examples(self) -> list[LabeledExample]:
        return [LabeledExample(Image(img), int(lbl)) for img, lbl in zip(self.images, self.labels)]

    def subset(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, self.split)

    def subsample(self, size: int, seed: int) -> Dataset:
        """Fixed seeded subsample (without replacement), kept in original order."""
        if size >= len(self):
            return self
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(self), size=size, replace=False))
        return self.subset(idx)


@dataclass(frozen=True)
class SyntheticConfig:
    height: int = 16
    width: int = 16
    channels: int = 3
    num_classes: int = 4
    samples_per_class: int = 50
    noise: float = 0.1

    def validate(self) -> None:
        if self.height < 8 or self.width < 8:
            raise InvalidConfigError("H and W must be at least 8")
        if self.channels < 1:
            raise InvalidConfigError("channels must be positive")
        if self.num_classes < 2:
            raise InvalidConfigError("need at least 2 classes")
        if self.num_classes > MAX_CLASSES:
            raise InvalidConfigError(
                f"at most {MAX_CLASSES} distinct grating patterns are supported, got K={self.num_classes}"
            )
        if self.samples_per_class < 1:
            raise InvalidConfigError("samples_per_class must be positive")
        if not 0.0 <= self.noise <= 0.5:
            raise InvalidConfigError("noise amplitude must lie in [0, 0.5]")


def class_pattern(k: int, height: int, width: int, channels: int) -> np.ndarray:
    """Pure grating for class ``k``: orientation from k % 4, frequency from k // 4."""
    theta = _ORIENTATIONS[k % len(_ORIENTATIONS)]
    freq = _FREQUENCIES[k // len(_ORIENTATIONS)]
    r = np.arange(height)[:, None] / height
    c = np.arange(width)[None, :] / width
    phase = 2 * np.pi * freq * (r * np.cos(theta) + c * np.sin(theta))
    # per-channel phase shift gives colour structure
    shifts = 2 * np.pi * np.arange(channels) / max(channels, 1) / 3
    pattern = 0.5 + 0.3 * np.sin(phase[:, :, None] + shifts[None, None, :])
    return pattern.astype(np.float32)


def generate_synthetic(config: SyntheticConfig, seed: int, split: str = "train") -> Dataset:
    """Oriented-grating classes plus uniform noise, clipped to [0, 1].

    Pure function of ``(config, seed, split)``. The train and test splits draw
    from disjoint child streams of the same seed.
    """
    config.validate()
    if split not in SPLITS:
        raise InvalidConfigError(f"split must be one of {SPLITS}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, SPLITS.index(split)]))
    H, W, C, K = config.height, config.width, config.channels, config.num_classes
    n_per = config.samples_per_class
    patterns = np.stack([class_pattern(k, H, W, C) for k in range(K)])
    labels = np.repeat(np.arange(K), n_per)
    noise = rng.uniform(-config.noise, config.noise, size=(K * n_per, H, W, C)).astype(np.float32)
    images = np.clip(patterns[labels] + noise, 0.0, 1.0)
    order = rng.permutation(K * n_per)
    return Dataset(images[order], labels[order], K, split)


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    N = len(dataset)
    H, W, C = dataset.shape
    buf = bytearray()
    buf += _HEADER.pack(MAGIC, VERSION, SPLITS.index(dataset.split))
    buf += _DIMS.pack(H, W, C, dataset.num_classes, N)
    labels = dataset.labels.astype("<u4")
    pixels = dataset.images.reshape(N, H * W * C).astype("<f4")
    rec = np.empty(N, dtype=[("label", "<u4"), ("data", "<f4", (H * W * C,))])
    rec["label"] = labels
    rec["data"] = pixels
    buf += rec.tobytes()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(buf))
    tmp.replace(path)


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    head = _HEADER.size + _DIMS.size
    if len(raw) < head:
        raise DatasetFormatError("truncated-file", f"{path}: header shorter than {head} bytes")
    magic, version, split_tag = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetFormatError("malformed-header", f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError("malformed-header", f"{path}: unsupported version {version}")
    if split_tag >= len(SPLITS):
        raise DatasetFormatError("malformed-header", f"{path}: unknown split tag {split_tag}")
    H, W, C, K, N = _DIMS.unpack_from(raw, _HEADER.size)
    if min(H, W, C) == 0 or K == 0:
        raise DatasetFormatError("malformed-header", f"{path}: zero dimension in header")
    rec_dtype = np.dtype([("label", "<u4"), ("data", "<f4", (H * W * C,))])
    expected = head + N * rec_dtype.itemsize
    if len(raw) < expected:
        raise DatasetFormatError("truncated-file", f"{path}: expected {expected} bytes, got {len(raw)}")
    if len(raw) > expected:
        raise DatasetFormatError("malformed-header", f"{path}: {len(raw) - expected} trailing bytes")
    rec = np.frombuffer(raw, dtype=rec_dtype, count=N, offset=head)
    labels = rec["label"].astype(np.int64)
    images = rec["data"].astype(np.float32).reshape(N, H, W, C)
    if N and (not np.all(np.isfinite(images)) or images.min() < 0 or images.max() > 1):
        raise DatasetFormatError("value-out-of-range", f"{path}: intensity outside [0, 1]")
    if N and labels.max() >= K:
        raise DatasetFormatError("value-out-of-range", f"{path}: label >= K={K}")
    return Dataset(images, labels, int(K), SPLITS[split_tag])
