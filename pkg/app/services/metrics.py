"""PSNR and roughness index."""
import math
from typing import Optional

import numpy as np

from app.errors import ConfigurationError, UndefinedRoughnessError
from app.models.response import MetricReport

DEFAULT_MAX_VAL = 255.0


def psnr(reference: np.ndarray, test: np.ndarray, max_val: float = DEFAULT_MAX_VAL) -> float:
    """10*log10(max_val^2 / MSE); identical images give +inf."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ConfigurationError(f"psnr shapes differ: {reference.shape} vs {test.shape}")
    if max_val <= 0:
        raise ConfigurationError(f"psnr max_val must be positive, got {max_val}")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def roughness(image: np.ndarray) -> float:
    """(|h1 * X|_1 + |h2 * X|_1) / |X|_1 with valid-region first differences."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] < 2 or image.shape[1] < 2:
        raise ConfigurationError(f"roughness needs a 2-D image of at least 2x2, got {image.shape}")
    energy = float(np.abs(image).sum())
    if energy == 0.0:
        raise UndefinedRoughnessError("Roughness is undefined for an all-zero image")
    horizontal = float(np.abs(np.diff(image, axis=1)).sum())
    vertical = float(np.abs(np.diff(image, axis=0)).sum())
    return (horizontal + vertical) / energy


def metric_report(image: np.ndarray, reference: Optional[np.ndarray] = None,
                  frame_index: Optional[int] = None, max_val: float = DEFAULT_MAX_VAL) -> MetricReport:
    """PSNR (when a reference is available) and roughness of one frame."""
    return MetricReport(
        psnr_db=None if reference is None else psnr(reference, image, max_val),
        roughness=roughness(image),
        frame_index=frame_index,
    )
