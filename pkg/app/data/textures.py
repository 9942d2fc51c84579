"""Synthetic grayscale scenes bundled so training, tests and bench run offline.

Scenes mix band-limited Gaussian noise at several scales with hard-edged
shapes, then are rescaled to a target mean and contrast in display units.
"""
from typing import List, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from app.errors import ConfigurationError
from app.tensor import rng_for

_TEXTURE_STREAM = 4
_SCENE_STREAM = 5


def _band_noise(rng: np.random.Generator, height: int, width: int, scales: Sequence[float]) -> np.ndarray:
    field = np.zeros((height, width))
    for weight, sigma in enumerate(scales, start=1):
        layer = gaussian_filter(rng.standard_normal((height, width)), sigma=sigma, mode="reflect")
        std = layer.std()
        if std > 0:
            field += layer / std / weight
    return field


def _shapes(rng: np.random.Generator, height: int, width: int, count: int) -> np.ndarray:
    rows, cols = np.mgrid[0:height, 0:width]
    canvas = np.zeros((height, width))
    for _ in range(count):
        level = rng.uniform(-1.0, 1.0)
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        if rng.random() < 0.5:
            radius = rng.uniform(0.05, 0.2) * min(height, width)
            mask = (rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2
        else:
            hh = rng.uniform(0.05, 0.25) * height
            hw = rng.uniform(0.05, 0.25) * width
            mask = (np.abs(rows - cy) <= hh) & (np.abs(cols - cx) <= hw)
        canvas[mask] = level
    return canvas


def _rescale(field: np.ndarray, mean: float, contrast: float) -> np.ndarray:
    std = field.std()
    centered = field - field.mean()
    if std > 0:
        centered = centered / std
    return np.clip(mean + contrast * centered, 0.0, 255.0)


def texture(height: int, width: int, seed: int = 0, mean: float = 90.0, contrast: float = 35.0,
            scales: Sequence[float] = (1.0, 3.0, 8.0), shapes: int = 6) -> np.ndarray:
    """One deterministic textured scene in [0, 255]."""
    if height <= 0 or width <= 0:
        raise ConfigurationError(f"Texture extent must be positive, got {height}x{width}")
    rng = rng_for(seed, _TEXTURE_STREAM)
    field = _band_noise(rng, height, width, scales) + 1.5 * _shapes(rng, height, width, shapes)
    return _rescale(field, mean, contrast)


def bundled_textures(count: int = 8, size: int = 96, seed: int = 0) -> List[np.ndarray]:
    """The offline training corpus: `count` textures of size x size."""
    return [texture(size, size, seed=seed * 1000 + index) for index in range(count)]


def moving_scene(height: int, width: int, seed: int = 0, mean: float = 90.0,
                 contrast: float = 30.0) -> np.ndarray:
    """Smooth base scene for moving-window sequences.

    Coarser than the training textures so the local-mean target of scene-based
    correction tracks the scene rather than its fine detail.
    """
    if height <= 0 or width <= 0:
        raise ConfigurationError(f"Scene extent must be positive, got {height}x{width}")
    rng = rng_for(seed, _SCENE_STREAM)
    field = _band_noise(rng, height, width, (4.0, 10.0, 24.0))
    field += gaussian_filter(_shapes(rng, height, width, 4), sigma=1.5, mode="reflect")
    return _rescale(field, mean, contrast)
