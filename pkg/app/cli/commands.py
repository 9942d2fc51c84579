"""Command handlers: simulate, correct, train, bench, dataset.

Each handler takes the parsed argparse namespace, does its work, writes its
artifacts plus a reproduction manifest, and returns the process exit code.
"""
import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app.data.textures import bundled_textures
from app.errors import ConfigurationError, UsageError
from app.graph.graph import run_bench
from app.models.request import BenchConfig, CorrectConfig, DatasetConfig, ImageSource, TrainRequest
from app.models.response import MetricReport, RunManifest, curve_csv
from app.network.checkpoint import load_checkpoint, save_checkpoint
from app.network.model import CascadeModel, model_forward
from app.network.training import evaluate_model, loss_history_csv, train_model, validation_psnr_csv
from app.services.classical import SceneBasedCorrector, correct, two_point_calibrate
from app.services.datasets import gen_patch_dataset, load_patch_dataset, save_patch_dataset
from app.services.image_io import PGM_SUFFIXES, RAW_SUFFIXES, read_image, write_image, write_raw_f32
from app.services.metrics import metric_report
from app.services.noise import NoiseSpec, apply_fpn, make_noise
from app.tensor import no_grad

logger = logging.getLogger(__name__)


def manifest_path(artifact: Path) -> Path:
    return artifact.with_name(artifact.name + ".manifest.json")


def write_manifest(path: Path, command: str, run_config: Dict[str, Any],
                   seeds: Optional[Dict[str, Optional[int]]] = None, outputs: Sequence[Path] = ()) -> Path:
    manifest = RunManifest(
        command=command,
        config=run_config,
        seeds=seeds or {},
        outputs=[str(p) for p in outputs],
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2))
    logger.debug(f"[CLI] Wrote manifest {path}")
    return path


def _read_all(paths: Sequence[str]) -> List[np.ndarray]:
    for p in paths:
        if not Path(p).is_file():
            raise UsageError(f"Input '{p}' does not exist")
    return [read_image(p) for p in paths]


def load_source_images(source: ImageSource) -> List[np.ndarray]:
    """Clean training images from a directory, or the bundled textures."""
    if source.directory is None:
        return bundled_textures(source.bundled_count, source.bundled_size, source.bundled_seed)
    paths = sorted(p for p in source.directory.iterdir() if p.suffix.lower() in PGM_SUFFIXES + RAW_SUFFIXES)
    if not paths:
        raise UsageError(f"No .pgm/.f32 images in {source.directory}")
    return [read_image(p) for p in paths]


# simulate
def simulate(args: argparse.Namespace) -> int:
    [clean] = _read_all([args.input])
    spec = NoiseSpec(sigma_g=args.sigma_g, sigma_o=args.sigma_o, gain_geometry=args.geometry, seed=args.seed)
    corrupted = apply_fpn(clean, make_noise(spec, *clean.shape))
    output = write_image(args.output, corrupted, bit_depth=args.bit_depth)
    write_manifest(manifest_path(output), "simulate",
                   {"input": str(args.input), "noise": spec.model_dump(), "bit_depth": args.bit_depth},
                   seeds={"noise": spec.seed}, outputs=[output])
    logger.info(f"[SIM] Wrote {output} (sigma_g={spec.sigma_g:g}, sigma_o={spec.sigma_o:g}, "
                f"{spec.gain_geometry}, seed={spec.seed})")
    return 0


# correct
def _output_paths(inputs: Sequence[str], output: str) -> List[Path]:
    if len(inputs) == 1:
        return [Path(output)]
    directory = Path(output)
    if directory.exists() and not directory.is_dir():
        raise UsageError(f"Several inputs need --output to be a directory, '{output}' is a file")
    return [directory / Path(p).name for p in inputs]


def _dump_features(directory: Path, stem: str, frame: np.ndarray, model: CascadeModel) -> List[Path]:
    units = [("gain", u) for u in model.gain_subnet.attention_units] + \
            [("offset", u) for u in model.offset_subnet.attention_units]
    for _, unit in units:
        unit.capture_masks = True
    try:
        with no_grad():
            output = model_forward(frame, model)
    finally:
        for _, unit in units:
            unit.capture_masks = False
    written = [
        write_raw_f32(directory / f"{stem}_gain_hat.f32", output.gain_hat.data[0, 0]),
        write_raw_f32(directory / f"{stem}_offset_hat.f32", output.offset_hat.data[0, 0]),
    ]
    counters: Dict[str, int] = {}
    for subnet, unit in units:
        index = counters.get(subnet, 0)
        counters[subnet] = index + 1
        spatial, channel = unit.last_masks
        if spatial is not None:
            written.append(write_raw_f32(directory / f"{stem}_{subnet}_feb{index}_spatial.f32",
                                         spatial[0].mean(axis=0)))
        if channel is not None:
            written.append(write_raw_f32(directory / f"{stem}_{subnet}_feb{index}_channel.f32", channel[:1]))
    return written


def correct_frames(args: argparse.Namespace, frames: List[np.ndarray], run_config: CorrectConfig):
    """Restore frames with the selected method; returns (restored frames, model or None)."""
    method = args.method
    if method == "cnn":
        if not args.model:
            raise UsageError("Method 'cnn' needs --model")
        model = load_checkpoint(args.model, precision=run_config.precision)
        restored = []
        with no_grad():
            for frame in frames:
                restored.append(model_forward(frame, model).x_hat.data[0, 0].astype(np.float64))
        return restored, model
    if method == "two-point":
        if not args.refs_low or not args.refs_high:
            raise UsageError("Method 'two-point' needs --refs-low and --refs-high")
        cal = two_point_calibrate(_read_all(args.refs_low), _read_all(args.refs_high))
        return [correct(frame, cal) for frame in frames], None
    corrector = SceneBasedCorrector(method, run_config.solver_for(method))
    return corrector.run(frames), None


def correct_command(args: argparse.Namespace) -> int:
    run_config = CorrectConfig.from_file(args.config) if args.config else CorrectConfig()
    if args.method in ("nn", "fa", "tv"):
        run_config.solver_for(args.method).check_for(args.method)
    if args.dump_features and args.method != "cnn":
        raise UsageError("--dump-features is only available for method 'cnn'")
    if args.ground_truth and len(args.ground_truth) != len(args.input):
        raise UsageError(f"{len(args.ground_truth)} ground-truth path(s) for {len(args.input)} input(s)")

    frames = _read_all(args.input)
    truths = _read_all(args.ground_truth) if args.ground_truth else [None] * len(frames)
    outputs = _output_paths(args.input, args.output)

    restored, model = correct_frames(args, frames, run_config)
    reports: List[MetricReport] = []
    for t, (path, image, truth) in enumerate(zip(outputs, restored, truths)):
        write_image(path, image, bit_depth=run_config.bit_depth)
        reports.append(metric_report(image, truth, frame_index=t))

    single = len(outputs) == 1
    base = outputs[0] if single else Path(args.output) / "correct"
    report_file = base.with_name(base.name + ".metrics.json")
    report_file.write_text(json.dumps([r.model_dump(mode="json") for r in reports], indent=2))
    written = outputs + [report_file]
    if not single:
        curve_file = base.with_name(base.name + ".curve.csv")
        curve_file.write_text(curve_csv(reports))
        written.append(curve_file)
    if args.dump_features:
        directory = Path(args.dump_features)
        for path, frame in zip(outputs, frames):
            written += _dump_features(directory, path.stem, frame, model)

    write_manifest(manifest_path(base), "correct", {
        "method": args.method,
        "inputs": list(args.input),
        "model": args.model,
        "refs_low": args.refs_low,
        "refs_high": args.refs_high,
        "ground_truth": args.ground_truth,
        **run_config.model_dump(mode="json"),
    }, outputs=written)
    logger.info(f"[CLI] correct: {args.method} restored {len(frames)} frame(s)")
    return 0


# train
def train_command(args: argparse.Namespace) -> int:
    request = TrainRequest.from_file(args.config)
    if request.dataset_dir is not None:
        dataset = load_patch_dataset(request.dataset_dir)
    else:
        ds = request.dataset
        dataset = gen_patch_dataset(
            load_source_images(ds.source), ds.count, augment=ds.augment,
            sigma_g_range=ds.sigma_g_range, sigma_o_range=ds.sigma_o_range, seed=ds.seed,
            patch_size=ds.patch_size, gain_geometry=ds.gain_geometry,
        )
    train_set, validation = dataset.split(request.holdout)

    model = CascadeModel(request.architecture, precision=request.precision)
    result = train_model(train_set, request.train, model, validation=validation)
    checkpoint = save_checkpoint(result.model, request.output)
    history = request.loss_history_path
    history.parent.mkdir(parents=True, exist_ok=True)
    history.write_text(loss_history_csv(result.loss_history))
    outputs = [checkpoint, history]
    if result.validation_psnr:
        curve = request.validation_psnr_path
        curve.write_text(validation_psnr_csv(result.validation_psnr))
        outputs.append(curve)

    if len(validation):
        evaluation = evaluate_model(validation, result.model)
        logger.info(f"[TRAIN] Validation PSNR {evaluation.corrupted_psnr:.2f} -> {evaluation.restored_psnr:.2f} dB, "
                    f"roughness {evaluation.corrupted_roughness:.4f} -> {evaluation.restored_roughness:.4f}")

    write_manifest(manifest_path(checkpoint), "train", request.model_dump(mode="json"),
                   seeds={"dataset": dataset.seed, "architecture": request.architecture.seed,
                          "train": request.train.seed},
                   outputs=outputs)
    return 0


# bench
def bench_command(args: argparse.Namespace) -> int:
    bench_config = BenchConfig.from_file(args.config)
    table = run_bench(bench_config)
    text_path = bench_config.output.with_suffix(".txt")
    csv_path = bench_config.output.with_suffix(".csv")
    text_path.parent.mkdir(parents=True, exist_ok=True)
    text_path.write_text(table.to_text())
    csv_path.write_text(table.to_csv())
    write_manifest(manifest_path(text_path), "bench", bench_config.model_dump(mode="json"),
                   seeds={"noise": bench_config.noise_seed, "scene": bench_config.scene.seed},
                   outputs=[text_path, csv_path])
    print(table.to_text(), end="")
    return 0


# dataset
def dataset_command(args: argparse.Namespace) -> int:
    ds = DatasetConfig.from_file(args.config)
    output = Path(args.output) if args.output else ds.output
    if output is None:
        raise UsageError("dataset needs an output directory (--output or 'output' in the config)")
    if output.exists() and not output.is_dir():
        raise ConfigurationError(f"Dataset output '{output}' exists and is not a directory")
    dataset = gen_patch_dataset(
        load_source_images(ds.source), ds.count, augment=ds.augment,
        sigma_g_range=ds.sigma_g_range, sigma_o_range=ds.sigma_o_range, seed=ds.seed,
        patch_size=ds.patch_size, gain_geometry=ds.gain_geometry,
    )
    index = save_patch_dataset(dataset, output)
    write_manifest(manifest_path(index), "dataset", ds.model_dump(mode="json"),
                   seeds={"dataset": ds.seed}, outputs=[index])
    return 0
