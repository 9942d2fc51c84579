"""Benchmark graph nodes."""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List

import numpy as np

from app.config import config
from app.data.textures import moving_scene
from app.errors import ConfigurationError, UsageError
from app.graph.state import BenchGraphState
from app.models.request import BenchConfig, SceneSource
from app.models.response import BenchTable, MetricReport, curve_csv, mean_cell
from app.network.checkpoint import load_checkpoint
from app.network.model import restore_image
from app.services.classical import SceneBasedCorrector, correct, two_point_calibrate
from app.services.image_io import PGM_SUFFIXES, RAW_SUFFIXES, read_image
from app.services.metrics import metric_report
from app.services.noise import (
    NoiseSpec,
    apply_fpn,
    gen_sequence,
    linear_path,
    make_noise,
    random_walk_path,
    stall_path,
)
from app.tensor import rng_for

logger = logging.getLogger(__name__)

CORRUPTED = "corrupted"
_CELL_SEED_STREAM = 7


def load_clean_sequence(scene: SceneSource) -> List[np.ndarray]:
    """Clean frames from a directory (sorted by name) or a moving window over a synthetic scene."""
    if scene.directory is not None:
        paths = sorted(p for p in Path(scene.directory).iterdir()
                       if p.suffix.lower() in PGM_SUFFIXES + RAW_SUFFIXES)
        if not paths:
            raise UsageError(f"No .pgm/.f32 frames in {scene.directory}")
        frames = [read_image(p) for p in paths[:scene.frames]]
        if any(f.shape != frames[0].shape for f in frames):
            raise ConfigurationError(f"Frames in {scene.directory} differ in shape")
        return frames

    base = moving_scene(scene.height + scene.margin, scene.width + scene.margin, seed=scene.seed)
    span = (scene.margin, scene.margin)
    if scene.motion == "linear":
        path = linear_path(scene.frames, scene.velocity, span=span)
    else:
        path = random_walk_path(scene.frames, span, seed=scene.seed, max_step=scene.max_step)
    if scene.stall is not None:
        path = stall_path(path, *scene.stall)
    still = make_noise(NoiseSpec(), scene.height, scene.width)
    return [clean for clean, _ in gen_sequence(base, scene.frames, path, still)]


def cell_noise_spec(cfg: BenchConfig, index: int, sigma_g: float, sigma_o: float) -> NoiseSpec:
    seed = int(rng_for(cfg.noise_seed, _CELL_SEED_STREAM, index).integers(2 ** 63))
    return NoiseSpec(sigma_g=sigma_g, sigma_o=sigma_o, gain_geometry=cfg.gain_geometry, seed=seed)


def run_method(method: str, corrupted: List[np.ndarray], state: BenchGraphState) -> List[np.ndarray]:
    """Restore every corrupted frame of the cell with one method."""
    cfg = state["config"]
    if method in ("nn", "fa", "tv"):
        # stateful: one pass over the sequence in temporal order
        return SceneBasedCorrector(method, cfg.solver_for(method)).run(corrupted)
    if method == "two-point":
        low_level, high_level = cfg.reference_levels
        noise = state["noise"]
        low = apply_fpn(np.full(noise.shape, low_level), noise)
        high = apply_fpn(np.full(noise.shape, high_level), noise)
        cal = two_point_calibrate([low], [high])
        return [correct(frame, cal) for frame in corrupted]
    if method == "cnn":
        return [restore_image(frame, state["model"]) for frame in corrupted]
    raise ConfigurationError(f"Unknown method '{method}'")


# Step 1: clean sequence, grid and model
def prepareSequence(state: BenchGraphState) -> BenchGraphState:
    cfg = state["config"]
    logger.info("[BENCH] prepare_sequence: Starting...")
    state["clean_frames"] = load_clean_sequence(cfg.scene)
    state["grid"] = cfg.noise_grid
    state["cell_index"] = 0
    state["rows"] = []
    state["model"] = load_checkpoint(cfg.model) if "cnn" in cfg.methods else None
    frame = state["clean_frames"][0]
    logger.info(f"[BENCH] prepare_sequence: {len(state['clean_frames'])} frames of "
                f"{frame.shape[0]}x{frame.shape[1]}, {len(state['grid'])} noise levels, "
                f"methods={cfg.methods}")
    return state


# Step 2: corrupt the sequence with this cell's fixed pattern
def simulateCell(state: BenchGraphState) -> BenchGraphState:
    cfg = state["config"]
    index = state["cell_index"]
    sigma_g, sigma_o = state["grid"][index]
    height, width = state["clean_frames"][0].shape
    noise = make_noise(cell_noise_spec(cfg, index, sigma_g, sigma_o), height, width)
    state["noise"] = noise
    state["corrupted_frames"] = [apply_fpn(frame, noise) for frame in state["clean_frames"]]
    logger.info(f"[BENCH] simulate_cell {index + 1}/{len(state['grid'])}: "
                f"sigma_g={sigma_g:g} sigma_o={sigma_o:g}")
    return state


# Step 3: run every enabled method
def correctCell(state: BenchGraphState) -> BenchGraphState:
    cfg = state["config"]
    corrupted = state["corrupted_frames"]
    started = time.perf_counter()
    workers = min(config.THREADS, len(cfg.methods)) if cfg.parallel else 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda m: run_method(m, corrupted, state), cfg.methods))
    else:
        results = [run_method(m, corrupted, state) for m in cfg.methods]
    state["restored"] = dict(zip(cfg.methods, results))
    logger.info(f"[BENCH] correct_cell: {len(cfg.methods)} method(s) in {time.perf_counter() - started:.2f}s")
    return state


# Step 4: per-frame metrics, averaged into one table row
def scoreCell(state: BenchGraphState) -> BenchGraphState:
    cfg = state["config"]
    index = state["cell_index"]
    sigma_g, sigma_o = state["grid"][index]
    clean = state["clean_frames"]
    columns: Dict[str, List[np.ndarray]] = {CORRUPTED: state["corrupted_frames"], **state["restored"]}

    cells = {}
    for column, frames in columns.items():
        reports: List[MetricReport] = [
            metric_report(frame, clean[t] if cfg.ground_truth else None, frame_index=t)
            for t, frame in enumerate(frames)
        ]
        cells[column] = mean_cell(reports)
        if cfg.export_curves is not None:
            directory = Path(cfg.export_curves)
            directory.mkdir(parents=True, exist_ok=True)
            (directory / f"g{sigma_g:g}_o{sigma_o:g}_{column}.csv").write_text(curve_csv(reports))

    state["rows"] = state["rows"] + [(sigma_g, sigma_o, cells)]
    state["cell_index"] = index + 1
    summary = ", ".join(f"{c}={cells[c].render()}" for c in cells)
    logger.info(f"[BENCH] score_cell {index + 1}/{len(state['grid'])}: {summary}")
    return state


# Step 5: assemble the table and mark the best cell per row
def buildTable(state: BenchGraphState) -> BenchGraphState:
    table = BenchTable(columns=[CORRUPTED] + list(state["config"].methods))
    for sigma_g, sigma_o, cells in state["rows"]:
        table.add_row(sigma_g, sigma_o, cells)
    table.mark_best()
    state["table"] = table
    logger.info(f"[BENCH] build_table: {len(table.rows)} row(s) x {len(table.columns)} column(s)")
    return state
