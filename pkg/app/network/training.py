"""Mini-batch ADAM training of the cascade model on paired patches."""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.config import config
from app.errors import ConfigurationError, DatasetError, TrainingDivergedError
from app.network.model import CascadeModel, model_forward
from app.services.datasets import PatchDataset
from app.services.metrics import psnr, roughness
from app.tensor import Adam, Tensor, backward, elementwise, gradient_sink, mse_loss, no_grad, rng_for, step_decay

logger = logging.getLogger(__name__)

_SHUFFLE_STREAM = 6


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(50, ge=0)
    batch_size: int = Field(128, ge=1)
    lr0: float = Field(0.001, gt=0)
    lr_decay_factor: float = Field(0.1, gt=0)
    lr_decay_every: int = Field(25, ge=1)
    loss: Literal["mse"] = "mse"
    seed: int = 0
    intermediate_supervision: bool = False
    # Stop after this many optimizer steps (desk-scale runs)
    max_steps: Optional[int] = Field(None, ge=0)
    data_parallel: bool = False
    log_every: int = Field(50, ge=1)
    # Held-out PSNR every this many steps when a validation set is given
    validate_every: Optional[int] = Field(None, ge=1)


@dataclass
class TrainResult:
    model: CascadeModel
    loss_history: List[float] = field(default_factory=list)
    steps: int = 0
    final_lr: float = 0.0
    # (step, mean restored PSNR on the held-out patches)
    validation_psnr: List[Tuple[int, float]] = field(default_factory=list)


def _batch_loss(model: CascadeModel, observed: np.ndarray, clean: np.ndarray, cfg: TrainConfig) -> Tensor:
    output = model_forward(observed, model)
    loss = mse_loss(output.x_hat, clean)
    if cfg.intermediate_supervision:
        loss = elementwise(loss, mse_loss(output.gain_corrected, clean), "add")
    return loss


def _serial_step(model: CascadeModel, observed: np.ndarray, clean: np.ndarray, cfg: TrainConfig) -> float:
    params = model.parameters()
    loss = _batch_loss(model, observed, clean, cfg)
    backward(loss, params)
    return float(loss.item())


def _parallel_step(model: CascadeModel, observed: np.ndarray, clean: np.ndarray, cfg: TrainConfig,
                   pool: ThreadPoolExecutor, shards: int) -> float:
    """Evaluate shards on worker threads and reduce their gradients in shard order."""
    params = model.parameters()
    bounds = np.linspace(0, observed.shape[0], shards + 1).astype(int)
    pieces = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def _shard(span: Tuple[int, int]):
        start, stop = span
        with gradient_sink() as sink:
            loss = _batch_loss(model, observed[start:stop], clean[start:stop], cfg)
            backward(loss)
        return float(loss.item()), [sink.get(p) for p in params]

    results = list(pool.map(_shard, pieces))
    total = observed.shape[0]
    for p in params:
        p.zero_grad()
    loss_value = 0.0
    for (start, stop), (shard_loss, grads) in zip(pieces, results):
        weight = (stop - start) / total
        loss_value += weight * shard_loss
        for p, grad in zip(params, grads):
            if grad is not None:
                p.grad += weight * grad
    return loss_value


def train_model(dataset: PatchDataset, cfg: TrainConfig, model: Optional[CascadeModel] = None,
                validation: Optional[PatchDataset] = None) -> TrainResult:
    """Minimize the MSE between restored and clean patches over shuffled mini-batches.

    With a non-empty `validation` set and `cfg.validate_every`, the mean restored
    PSNR of the held-out patches is recorded every `validate_every` steps.
    """
    model = model or CascadeModel()
    result = TrainResult(model=model, final_lr=cfg.lr0)
    if cfg.epochs == 0 or cfg.max_steps == 0:
        logger.info("[TRAIN] Nothing to do (0 epochs or 0 steps); model unchanged")
        return result
    if len(dataset) == 0:
        raise DatasetError("Training needs a non-empty patch dataset")
    size = dataset.clean.shape[1:]
    if size[0] % 2 or size[1] % 2:
        raise ConfigurationError(f"Training patches must have even extents, got {size}")

    n = len(dataset)
    observed_all = dataset.corrupted[:, None].astype(model.dtype)
    clean_all = dataset.clean[:, None].astype(model.dtype)
    optimizer = Adam(model.parameters(), lr=cfg.lr0)
    track_validation = cfg.validate_every is not None and validation is not None and len(validation) > 0
    shards = min(config.THREADS, cfg.batch_size) if cfg.data_parallel else 1
    pool = ThreadPoolExecutor(max_workers=shards) if shards > 1 else None

    logger.info(f"[TRAIN] {n} patches, {model.parameter_count():,} parameters, epochs={cfg.epochs}, "
                f"batch={cfg.batch_size}, lr0={cfg.lr0:g}, shards={shards}")
    started = time.perf_counter()
    step = 0
    try:
        for epoch in range(cfg.epochs):
            optimizer.lr = step_decay(cfg.lr0, epoch, cfg.lr_decay_factor, cfg.lr_decay_every)
            order = rng_for(cfg.seed, _SHUFFLE_STREAM, epoch).permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                observed, clean = observed_all[idx], clean_all[idx]
                if pool is not None:
                    loss = _parallel_step(model, observed, clean, cfg, pool, shards)
                else:
                    loss = _serial_step(model, observed, clean, cfg)
                if not math.isfinite(loss):
                    raise TrainingDivergedError(batch_index=step, lr=optimizer.lr, loss=loss)
                optimizer.step()
                result.loss_history.append(loss)
                step += 1
                if track_validation and step % cfg.validate_every == 0:
                    value = evaluate_model(validation, model).restored_psnr
                    result.validation_psnr.append((step, value))
                    logger.info(f"[TRAIN] step={step} validation PSNR={value:.3f} dB")
                if step % cfg.log_every == 0:
                    logger.info(f"[TRAIN] step={step} epoch={epoch} lr={optimizer.lr:g} loss={loss:.6g}")
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
    finally:
        if pool is not None:
            pool.shutdown()

    result.steps = step
    result.final_lr = optimizer.lr
    logger.info(f"[TRAIN] Finished {step} steps in {time.perf_counter() - started:.1f}s, "
                f"final loss={result.loss_history[-1]:.6g}")
    return result


def loss_history_csv(history: List[float]) -> str:
    lines = ["step,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(history)]
    return "\n".join(lines) + "\n"


def validation_psnr_csv(curve: List[Tuple[int, float]]) -> str:
    lines = ["step,psnr_db"] + [f"{step},{value!r}" for step, value in curve]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PatchEvaluation:
    corrupted_psnr: float
    restored_psnr: float
    corrupted_roughness: float
    restored_roughness: float

    @property
    def psnr_gain(self) -> float:
        return self.restored_psnr - self.corrupted_psnr

    @property
    def roughness_reduction(self) -> float:
        return 1.0 - self.restored_roughness / self.corrupted_roughness


def evaluate_model(dataset: PatchDataset, model: CascadeModel, batch_size: int = 64) -> PatchEvaluation:
    """Mean PSNR and roughness of corrupted and restored patches."""
    if len(dataset) == 0:
        raise DatasetError("Evaluation needs a non-empty patch dataset")
    restored = []
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            batch = dataset.corrupted[start:start + batch_size, None].astype(model.dtype)
            restored.append(model_forward(batch, model).x_hat.data[:, 0].astype(np.float64))
    restored = np.concatenate(restored)
    return PatchEvaluation(
        corrupted_psnr=float(np.mean([psnr(c, y) for c, y in zip(dataset.clean, dataset.corrupted)])),
        restored_psnr=float(np.mean([psnr(c, x) for c, x in zip(dataset.clean, restored)])),
        corrupted_roughness=float(np.mean([roughness(y) for y in dataset.corrupted])),
        restored_roughness=float(np.mean([roughness(x) for x in restored])),
    )
