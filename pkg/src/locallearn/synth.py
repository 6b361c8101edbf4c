"""Seeded synthetic datasets used by the test suite and experiment scripts.

Everything here is deterministic given the seed, so tolerances frozen in
tests stay meaningful.
"""

from __future__ import annotations

import numpy as np

from .core import FeatureMatrix


def two_arcs(n_samples: int, noise: float = 0.15, seed: int = 0, sweep: float = 1.5):
    """Two interleaved arc-shaped point clouds in 2-D.

    The classic geometry a global linear separator cannot handle: class 0
    sits on the upper arc, class 1 on the lower arc shifted into its
    mouth.  ``sweep`` > 1 extends each arc past a semicircle so its tip
    curls around the other class, which degrades any single hyperplane
    further.  Returns (X, y) shuffled.
    """
    rng = np.random.default_rng(seed)
    n1 = n_samples // 2
    n0 = n_samples - n1
    t0 = rng.uniform(0.0, sweep * np.pi, n0)
    t1 = rng.uniform(0.0, sweep * np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    X = np.vstack([upper, lower]) + rng.normal(0.0, noise, (n_samples, 2))
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    order = rng.permutation(n_samples)
    return X[order], y[order]


def gaussian_blobs(
    n_per_class: int, n_classes: int = 4, spread: float = 1.0, seed: int = 0
):
    """Gaussian blobs with centers on a circle; spread controls overlap."""
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    centers = 3.0 * np.column_stack([np.cos(angles), np.sin(angles)])
    X = np.vstack(
        [rng.normal(c, spread, (n_per_class, 2)) for c in centers]
    )
    y = np.repeat(np.arange(n_classes, dtype=np.int64), n_per_class)
    order = rng.permutation(X.shape[0])
    return X[order], y[order]


def as_feature_matrix(X, y=None, prefix: str = "s") -> FeatureMatrix:
    """Wrap arrays into a FeatureMatrix with generated sample ids."""
    ids = [f"{prefix}{i}" for i in range(X.shape[0])]
    return FeatureMatrix(X, ids, y)


def stripe_image(size: int, rng, horizontal: bool = True) -> np.ndarray:
    """Sinusoidal stripe texture with random period, phase, and pixel noise."""
    period = rng.integers(6, 13)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    coords = np.arange(size)
    wave = 127.5 + 100.0 * np.sin(2.0 * np.pi * coords / period + phase)
    img = np.tile(wave[:, None] if horizontal else wave[None, :], (1, size) if horizontal else (size, 1))
    img = img + rng.normal(0.0, 10.0, (size, size))
    return np.clip(img, 0, 255).astype(np.uint8)


def checker_image(size: int, rng) -> np.ndarray:
    """Checkerboard texture with random cell size, offset, and pixel noise."""
    cell = rng.integers(5, 10)
    oy, ox = rng.integers(0, cell, 2)
    yy, xx = np.mgrid[0:size, 0:size]
    pattern = (((yy + oy) // cell) + ((xx + ox) // cell)) % 2
    img = np.where(pattern == 0, 50.0, 205.0) + rng.normal(0.0, 10.0, (size, size))
    return np.clip(img, 0, 255).astype(np.uint8)


def texture_corpus(n_per_class: int, size: int = 48, seed: int = 0):
    """Stripes-vs-checkerboard image corpus; returns (images, label names)."""
    rng = np.random.default_rng(seed)
    images: list[np.ndarray] = []
    labels: list[str] = []
    for _ in range(n_per_class):
        images.append(stripe_image(size, rng))
        labels.append("stripes")
    for _ in range(n_per_class):
        images.append(checker_image(size, rng))
        labels.append("checker")
    return images, labels
