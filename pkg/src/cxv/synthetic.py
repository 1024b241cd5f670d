"""Learnable CIFAR-shaped fixtures for smoke runs without the real dataset.

Each class gets a fixed colour-and-stripe template; samples are the template
under a random spatial shift plus pixel noise.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Dataset, serialize_cifar


def make_dataset(n: int, classes: int = 10, seed: int = 0, noise: float = 40.0,
                 name: str = "cifar10") -> Dataset:
    rng = np.random.default_rng(seed)
    tmpl_rng = np.random.default_rng(12345)
    yy, xx = np.mgrid[0:32, 0:32]
    templates = []
    for c in range(classes):
        colour = tmpl_rng.uniform(40, 215, size=3)
        angle = np.pi * c / classes
        freq = 2 * np.pi / (6 + c % 4 * 2)
        wave = np.sin(freq * (np.cos(angle) * xx + np.sin(angle) * yy))
        templates.append(colour[:, None, None] + 50 * wave[None] * tmpl_rng.choice((-1, 1), size=3)[:, None, None])
    templates = np.stack(templates)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    shifts = rng.integers(-3, 4, size=(n, 2))
    imgs = np.empty((n, 3, 32, 32))
    for i in range(n):
        imgs[i] = np.roll(templates[labels[i]], tuple(shifts[i]), axis=(1, 2))
    imgs += rng.normal(0, noise, size=imgs.shape)
    return Dataset(np.clip(np.rint(imgs), 0, 255).astype(np.uint8), labels.astype(np.int64), name)


def write_cifar10_dir(root, n_train: int = 500, n_test: int = 100, seed: int = 0) -> Path:
    """Write a CIFAR-10-layout binary directory (5 train batches + test batch)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    train = make_dataset(n_train, seed=seed)
    test = make_dataset(n_test, seed=seed + 1)
    parts = np.array_split(np.arange(n_train), 5)
    for i, idx in enumerate(parts, 1):
        (root / f"data_batch_{i}.bin").write_bytes(
            serialize_cifar(Dataset(train.images[idx], train.labels[idx])))
    (root / "test_batch.bin").write_bytes(serialize_cifar(test))
    return root
