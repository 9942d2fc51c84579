"""Fixed-pattern-noise simulation.

The detector response follows y = g * x + o per pixel, with the gain field g
and offset field o constant over time.
"""
import logging
from dataclasses import dataclass
from typing import List, Literal, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.errors import ConfigurationError
from app.tensor import rng_for

logger = logging.getLogger(__name__)

GainGeometry = Literal["stripe_column", "per_pixel"]

_NOISE_STREAM = 1


class NoiseSpec(BaseModel):
    """Parameters of one FPN realization (gain mean 1, offset mean 0)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    sigma_g: float = Field(0.0, ge=0)
    sigma_o: float = Field(0.0, ge=0)
    gain_geometry: GainGeometry = "stripe_column"
    seed: int = Field(0, ge=0, lt=2 ** 64)


@dataclass(frozen=True)
class FixedPatternNoise:
    gain: np.ndarray
    offset: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.gain.shape


def make_noise(spec: NoiseSpec, height: int, width: int) -> FixedPatternNoise:
    if height <= 0 or width <= 0:
        raise ConfigurationError(f"Noise field extent must be positive, got {height}x{width}")
    rng = rng_for(spec.seed, _NOISE_STREAM)
    if spec.gain_geometry == "stripe_column":
        columns = rng.normal(1.0, spec.sigma_g, size=width)
        gain = np.repeat(columns[None, :], height, axis=0)
    else:
        gain = rng.normal(1.0, spec.sigma_g, size=(height, width))
    offset = rng.normal(0.0, spec.sigma_o, size=(height, width))
    return FixedPatternNoise(gain=gain, offset=offset)


def apply_fpn(clean: np.ndarray, noise: FixedPatternNoise) -> np.ndarray:
    """y = g * x + o, unclipped."""
    clean = np.asarray(clean, dtype=np.float64)
    if clean.shape != noise.shape:
        raise ConfigurationError(f"Image shape {clean.shape} does not match noise field {noise.shape}")
    return noise.gain * clean + noise.offset


def gen_sequence(
    base_scene: np.ndarray,
    frames: int,
    motion: Sequence[Tuple[int, int]],
    noise: FixedPatternNoise,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Crop a moving window out of base_scene and corrupt every frame with the same FPN.

    motion[t] = (dx, dy) is the top-left corner of the window for frame t.
    """
    base_scene = np.asarray(base_scene, dtype=np.float64)
    height, width = noise.shape
    if len(motion) < frames:
        raise ConfigurationError(f"Motion path has {len(motion)} positions for {frames} frames")
    sequence = []
    for t in range(frames):
        dx, dy = (int(v) for v in motion[t])
        if dx < 0 or dy < 0 or dy + height > base_scene.shape[0] or dx + width > base_scene.shape[1]:
            raise ConfigurationError(
                f"Frame {t}: window at (dx={dx}, dy={dy}) size {height}x{width} leaves "
                f"base scene {base_scene.shape[0]}x{base_scene.shape[1]}"
            )
        clean = base_scene[dy:dy + height, dx:dx + width].copy()
        sequence.append((clean, apply_fpn(clean, noise)))
    logger.debug(f"[SIM] Generated {frames} frames of {height}x{width}")
    return sequence


def linear_path(frames: int, velocity: Tuple[int, int], start: Tuple[int, int] = (0, 0),
                span: Tuple[int, int] = (0, 0)) -> List[Tuple[int, int]]:
    """Constant-velocity path that bounces inside [0, span] on each axis."""
    path = []
    for t in range(frames):
        coords = []
        for axis in range(2):
            limit = span[axis]
            position = start[axis] + velocity[axis] * t
            if limit > 0:
                period = 2 * limit
                position %= period
                if position > limit:
                    position = period - position
            else:
                position = start[axis]
            coords.append(int(position))
        path.append((coords[0], coords[1]))
    return path


def random_walk_path(frames: int, span: Tuple[int, int], seed: int, max_step: int = 2) -> List[Tuple[int, int]]:
    """Seeded random walk clamped to [0, span] on each axis."""
    rng = rng_for(seed, 3)
    position = np.array([span[0] // 2, span[1] // 2])
    path = []
    for _ in range(frames):
        path.append((int(position[0]), int(position[1])))
        position = np.clip(position + rng.integers(-max_step, max_step + 1, size=2), 0, span)
    return path


def stall_path(path: Sequence[Tuple[int, int]], start: int, length: int) -> List[Tuple[int, int]]:
    """Freeze the window for `length` frames from `start`, provoking ghosting in scene-based correction."""
    path = list(path)
    if not 0 <= start < len(path):
        raise ConfigurationError(f"Stall start {start} outside path of length {len(path)}")
    frozen = path[start]
    for t in range(start, min(len(path), start + length)):
        path[t] = frozen
    return path
