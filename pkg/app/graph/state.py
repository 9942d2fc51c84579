"""Benchmark workflow state."""
from typing import Any, Dict, List, Optional, Tuple, TypedDict

import numpy as np

from app.models.request import BenchConfig
from app.models.response import BenchTable, MetricCell
from app.services.noise import FixedPatternNoise


class BenchGraphState(TypedDict):
    """State carried through the benchmark graph, one noise level (cell) at a time."""

    config: BenchConfig

    # Clean frames shared by every cell
    clean_frames: List[np.ndarray]

    # (sigma_g, sigma_o) per cell, in table order
    grid: List[Tuple[float, float]]
    cell_index: int

    # Current cell
    noise: Optional[FixedPatternNoise]
    corrupted_frames: List[np.ndarray]
    restored: Dict[str, List[np.ndarray]]

    # Loaded CNN checkpoint, when "cnn" is enabled
    model: Optional[Any]

    # Scored rows: (sigma_g, sigma_o, cells by column)
    rows: List[Tuple[float, float, Dict[str, MetricCell]]]

    table: Optional[BenchTable]
