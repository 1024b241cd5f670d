"""CIFAR binary ingestion, normalisation, RandAugment and batching."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from . import kernels
from .errors import DataError, DatasetIOError, FormatError, ParameterError, UsageError
from .optim import DualOptController
from .tensor import Tensor, get_dtype

PIXELS = 3 * 32 * 32
_LAYOUT = {
    # name: (label bytes per record, index of the kept label byte, classes)
    "cifar10": (1, 0, 10),
    "cifar100": (2, 1, 100),
}
_FILES = {
    "cifar10": ([f"data_batch_{i}.bin" for i in range(1, 6)], ["test_batch.bin"],
                ["cifar-10-batches-bin"]),
    "cifar100": (["train.bin"], ["test.bin"], ["cifar-100-binary"]),
}


@dataclass
class Dataset:
    images: np.ndarray  # uint8 [N,3,32,32]
    labels: np.ndarray  # int64 [N]
    name: str = "cifar10"

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def classes(self) -> int:
        return _LAYOUT[self.name][2]

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.name)


def _layout(name: str):
    name = name.replace("-fine", "").replace("-", "")
    if name not in _LAYOUT:
        raise DataError(f"unknown dataset {name!r}; expected cifar10 or cifar100")
    return name, _LAYOUT[name]


def parse_cifar(buf: bytes, name: str = "cifar10") -> Dataset:
    """Parse CIFAR binary records; CIFAR-100 keeps the fine label."""
    name, (nlab, keep, classes) = _layout(name)
    rec = nlab + PIXELS
    if len(buf) % rec:
        whole = len(buf) // rec
        raise FormatError(f"{len(buf)} bytes is not a multiple of the {rec}-byte {name} record; "
                          f"trailing partial record at offset {whole * rec}")
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, rec)
    labels = raw[:, keep].astype(np.int64)
    bad = np.flatnonzero(labels >= classes)
    if bad.size:
        raise DataError(f"record {bad[0]}: label {labels[bad[0]]} >= {classes}")
    images = raw[:, nlab:].reshape(-1, 3, 32, 32).copy()
    return Dataset(images, labels, name)


def serialize_cifar(ds: Dataset, coarse: Optional[np.ndarray] = None) -> bytes:
    """Inverse of :func:`parse_cifar`. CIFAR-100 coarse labels default to 0."""
    name, (nlab, keep, _) = _layout(ds.name)
    out = np.zeros((len(ds), nlab + PIXELS), dtype=np.uint8)
    if nlab == 2:
        out[:, 0] = 0 if coarse is None else coarse
    out[:, keep] = ds.labels
    out[:, nlab:] = ds.images.reshape(len(ds), PIXELS)
    return out.tobytes()


def load_cifar(path, name: str = "cifar10") -> Dataset:
    """Load one binary batch file, or concatenate several."""
    paths = [path] if isinstance(path, (str, os.PathLike)) else list(path)
    parts = []
    for p in paths:
        try:
            buf = Path(p).read_bytes()
        except OSError as exc:
            raise DatasetIOError(f"cannot read {p}: {exc.strerror}") from exc
        try:
            parts.append(parse_cifar(buf, name))
        except DataError as exc:
            raise type(exc)(f"{p}: {exc}") from None
    if not parts:
        raise UsageError("no CIFAR files given")
    return Dataset(np.concatenate([d.images for d in parts]),
                   np.concatenate([d.labels for d in parts]), parts[0].name)


def find_split_files(root, name: str = "cifar10") -> tuple[list[Path], list[Path]]:
    """Locate train/test batch files under ``root`` or its standard subdirectory."""
    name, _ = _layout(name)
    train, test, subdirs = _FILES[name]
    root = Path(root)
    for base in [root] + [root / s for s in subdirs]:
        tr, te = [base / f for f in train], [base / f for f in test]
        if all(p.is_file() for p in tr + te):
            return tr, te
    raise DatasetIOError(f"no {name} binary batches under {root}")


# ---------------------------------------------------------------------------
# normalisation


@dataclass(frozen=True)
class NormStats:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    @classmethod
    def from_images(cls, images: np.ndarray) -> "NormStats":
        x = images.astype(np.float64) / 255.0
        return cls(tuple(float(v) for v in x.mean(axis=(0, 2, 3))),
                   tuple(float(v) for v in x.std(axis=(0, 2, 3))))


def normalize(images: np.ndarray, stats: NormStats) -> np.ndarray:
    """uint8 [N,3,H,W] -> float standardised per channel with frozen ``stats``."""
    mean = np.asarray(stats.mean).reshape(1, 3, 1, 1)
    std = np.asarray(stats.std).reshape(1, 3, 1, 1)
    return ((images.astype(np.float64) / 255.0 - mean) / std).astype(get_dtype())


# ---------------------------------------------------------------------------
# RandAugment

MAX_MAGNITUDE = 30


def _rotate(img, level, rng):
    angle = math.radians(30.0 * level) * rng.choice((-1.0, 1.0))
    return _affine(img, np.array([[math.cos(angle), -math.sin(angle)],
                                  [math.sin(angle), math.cos(angle)]]))


def _translate_x(img, level, rng):
    return _shift(img, 10.0 * level * rng.choice((-1.0, 1.0)), 0.0)


def _translate_y(img, level, rng):
    return _shift(img, 0.0, 10.0 * level * rng.choice((-1.0, 1.0)))


def _shear_x(img, level, rng):
    return _affine(img, np.array([[1.0, 0.3 * level * rng.choice((-1.0, 1.0))], [0.0, 1.0]]))


def _shear_y(img, level, rng):
    return _affine(img, np.array([[1.0, 0.0], [0.3 * level * rng.choice((-1.0, 1.0)), 1.0]]))


def _brightness(img, level, rng):
    factor = 1.0 + 0.9 * level * rng.choice((-1.0, 1.0))
    return _clip(img.astype(np.float64) * factor)


def _contrast(img, level, rng):
    factor = 1.0 + 0.9 * level * rng.choice((-1.0, 1.0))
    x = img.astype(np.float64)
    gray = x.mean()
    return _clip(gray + factor * (x - gray))


def _posterize(img, level, rng):
    bits = 8 - int(round(4 * level))
    shift = 8 - bits
    return (img >> shift) << shift if shift else img.copy()


def _solarize(img, level, rng):
    threshold = 256.0 - 256.0 * level
    return np.where(img >= threshold, 255 - img, img).astype(np.uint8)


def _identity(img, level, rng):
    return img.copy()


def _clip(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def _affine(img: np.ndarray, lin: np.ndarray) -> np.ndarray:
    """Apply ``lin`` about the image centre; ``lin`` maps output to input offsets."""
    _, h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    c = np.array([cx, cy])
    inv = np.hstack([lin, (c - lin @ c)[:, None]])
    return kernels.warp_nearest(img, inv)


def _shift(img: np.ndarray, dx: float, dy: float) -> np.ndarray:
    return kernels.warp_nearest(img, np.array([[1.0, 0.0, -dx], [0.0, 1.0, -dy]]))


AUGMENT_OPS: dict[str, Callable] = {
    "identity": _identity,
    "rotate": _rotate,
    "translate_x": _translate_x,
    "translate_y": _translate_y,
    "shear_x": _shear_x,
    "shear_y": _shear_y,
    "brightness": _brightness,
    "contrast": _contrast,
    "posterize": _posterize,
    "solarize": _solarize,
}
GEOMETRIC_OPS = ("rotate", "translate_x", "translate_y", "shear_x", "shear_y")


@dataclass
class AugmentPolicy:
    enabled: bool = False
    n_ops: int = 1
    magnitude: int = 1
    op_set: tuple[str, ...] = tuple(AUGMENT_OPS)
    rng_seed: int = 0

    def __post_init__(self):
        if self.enabled and self.n_ops < 1:
            raise ParameterError(f"n_ops must be >= 1 when augmenting, got {self.n_ops}")
        if not 0 <= self.magnitude <= MAX_MAGNITUDE:
            raise ParameterError(f"magnitude must lie in [0, {MAX_MAGNITUDE}], got {self.magnitude}")
        unknown = set(self.op_set) - set(AUGMENT_OPS)
        if unknown:
            raise ParameterError(f"unknown augmentation ops {sorted(unknown)}")


def apply_op(img: np.ndarray, op: str, magnitude: int, rng: np.random.Generator) -> np.ndarray:
    return AUGMENT_OPS[op](img, magnitude / MAX_MAGNITUDE, rng)


def randaugment_apply(image: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Apply ``n_ops`` ops drawn uniformly with replacement, in sequence."""
    if not policy.enabled:
        return image
    ops = rng.integers(0, len(policy.op_set), size=policy.n_ops)
    for i in ops:
        image = apply_op(image, policy.op_set[i], policy.magnitude, rng)
    return image


# ---------------------------------------------------------------------------
# batching and schedule


def epoch_order(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(shuffle_seed ^ epoch).permutation(n)


def batch_iter(dataset: Dataset, batch_size: int, shuffle_seed: int, epoch: int,
               stats: NormStats, policy: Optional[AugmentPolicy] = None,
               shuffle: bool = True) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Yield (normalised images, labels); the final partial batch is kept.

    Order and augmentation are pure functions of (seed, epoch).
    """
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    if n == 0:
        raise UsageError("cannot iterate over an empty dataset")
    order = epoch_order(n, shuffle_seed, epoch) if shuffle else np.arange(n)
    aug_rng = None
    if policy is not None and policy.enabled:
        aug_rng = np.random.default_rng([policy.rng_seed, shuffle_seed, epoch])
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        imgs = dataset.images[idx]
        if aug_rng is not None:
            imgs = np.stack([randaugment_apply(im, policy, aug_rng) for im in imgs])
        yield Tensor(normalize(imgs, stats)), dataset.labels[idx]


@dataclass
class SchedulePhase:
    augment: AugmentPolicy
    dualopt: DualOptController


@dataclass
class TrainSchedule:
    phases: list[SchedulePhase]
    current: int = 0

    def __post_init__(self):
        if not self.phases:
            raise ParameterError("a schedule needs at least one phase")

    @property
    def active(self) -> SchedulePhase:
        return self.phases[self.current]


def post_training_schedule(augment: AugmentPolicy, make_controller: Callable[[], DualOptController]) -> TrainSchedule:
    """Augmented phase followed by an unaugmented one, each with its own controller."""
    plain = AugmentPolicy(enabled=False, n_ops=augment.n_ops, magnitude=augment.magnitude,
                          op_set=augment.op_set, rng_seed=augment.rng_seed)
    aug = AugmentPolicy(enabled=True, n_ops=augment.n_ops, magnitude=augment.magnitude,
                        op_set=augment.op_set, rng_seed=augment.rng_seed)
    return TrainSchedule([SchedulePhase(aug, make_controller()), SchedulePhase(plain, make_controller())])
