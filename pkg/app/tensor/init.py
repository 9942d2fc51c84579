"""Weight initialization and seeded random streams."""
from typing import Sequence, Tuple, Union

import numpy as np

from app.errors import ConfigurationError
from app.tensor.engine import Tensor


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for (seed, stream...) so parallel workers never share state."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2 ** 64 - 1), *stream]))


def he_normal_init(
    shape: Union[Sequence[int], Tuple[int, ...]],
    fan_in: int,
    rng: np.random.Generator,
    dtype=np.float64,
) -> Tensor:
    """Samples from normal(0, sqrt(2 / fan_in))."""
    if fan_in <= 0:
        raise ConfigurationError(f"fan_in must be positive, got {fan_in}")
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=tuple(shape)).astype(dtype))
