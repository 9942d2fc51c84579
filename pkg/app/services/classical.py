"""Classical FPN correction: two-point calibration and scene-based steepest descent.

All correctors estimate a calibration field (gain_hat, offset_hat) and restore
a frame as x_hat = gain_hat * y + offset_hat.

Scene-based solvers work in normalized units (frame / data_scale) so a single
base rate mu0 moves gain and offset at comparable speeds; fields are stored in
display units.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.ndimage import uniform_filter

from app.errors import ConfigurationError, MethodConfigError
from app.services.noise import FixedPatternNoise

logger = logging.getLogger(__name__)

SceneMethod = Literal["nn", "fa", "tv"]


@dataclass(frozen=True)
class CalibrationField:
    gain_hat: np.ndarray
    offset_hat: np.ndarray
    dead_pixels: Tuple[Tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        if self.gain_hat.shape != self.offset_hat.shape:
            raise ConfigurationError(
                f"Gain map {self.gain_hat.shape} and offset map {self.offset_hat.shape} differ in shape"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.gain_hat.shape

    @classmethod
    def identity(cls, height: int, width: int) -> "CalibrationField":
        """Gain one, offset zero."""
        return cls(gain_hat=np.ones((height, width)), offset_hat=np.zeros((height, width)))


class SbSolverConfig(BaseModel):
    """Weights and rates of the scene-based objective and its descent step."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    alpha: float = Field(1.0, ge=0)
    lam: float = Field(0.0, ge=0, alias="lambda")
    p: Literal[1, 2] = 2
    mu0: float = Field(0.05, gt=0)
    target_filter: Literal["mean3x3"] = "mean3x3"
    tv_epsilon: float = Field(1e-6, gt=0)
    fa_variance_gain: float = Field(0.05, ge=0)
    data_scale: float = Field(255.0, gt=0)

    @classmethod
    def for_method(cls, method: SceneMethod, **overrides) -> "SbSolverConfig":
        """Default configuration of each scene-based method."""
        presets = {
            "nn": {"alpha": 1.0, "lambda": 0.0, "p": 2, "mu0": 0.05},
            "fa": {"alpha": 1.0, "lambda": 0.0, "p": 2, "mu0": 0.05, "fa_variance_gain": 0.05},
            "tv": {"alpha": 0.0, "lambda": 1.0, "p": 1, "mu0": 1e-3},
        }
        if method not in presets:
            raise ConfigurationError(f"Unknown scene-based method '{method}'")
        return cls(**{**presets[method], **overrides})

    @model_validator(mode="after")
    def _check_weights(self) -> "SbSolverConfig":
        if self.alpha == 0 and self.lam == 0:
            raise ValueError("alpha and lambda cannot both be zero")
        return self

    def check_for(self, method: SceneMethod) -> None:
        """Reject configurations that do not describe `method`."""
        if method in ("nn", "fa"):
            if self.lam != 0:
                raise MethodConfigError(f"{method} correction requires lambda == 0, got {self.lam}")
            if self.alpha <= 0:
                raise MethodConfigError(f"{method} correction requires alpha > 0")
        elif method == "tv":
            if self.alpha != 0:
                raise MethodConfigError(f"tv correction requires alpha == 0, got {self.alpha}")
            if self.lam <= 0:
                raise MethodConfigError("tv correction requires lambda > 0")
            if self.p != 1:
                raise MethodConfigError(f"tv correction requires p == 1, got {self.p}")
        else:
            raise MethodConfigError(f"Unknown scene-based method '{method}'")


def _check_frame(frame: np.ndarray, cal: CalibrationField) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != cal.shape:
        raise ConfigurationError(f"Frame shape {frame.shape} does not match calibration field {cal.shape}")
    return frame


def correct(frame: np.ndarray, cal: CalibrationField) -> np.ndarray:
    """x_hat = gain_hat * y + offset_hat."""
    frame = _check_frame(frame, cal)
    return cal.gain_hat * frame + cal.offset_hat


def exact_calibration(noise: FixedPatternNoise) -> CalibrationField:
    """Field that exactly inverts y = g*x + o: gain 1/g, offset -o/g."""
    return CalibrationField(gain_hat=1.0 / noise.gain, offset_hat=-noise.offset / noise.gain)


def two_point_calibrate(low_frames: Sequence[np.ndarray], high_frames: Sequence[np.ndarray]) -> CalibrationField:
    """Per-pixel linear fit mapping the low/high reference responses onto their array means.

    Pixels whose low and high responses coincide are dead: they get unit gain
    and an offset that lifts the low response to the low mean.
    """
    if not low_frames or not high_frames:
        raise ConfigurationError("Two-point calibration needs at least one low and one high reference frame")
    low = np.mean(np.stack([np.asarray(f, dtype=np.float64) for f in low_frames]), axis=0)
    high = np.mean(np.stack([np.asarray(f, dtype=np.float64) for f in high_frames]), axis=0)
    if low.shape != high.shape:
        raise ConfigurationError(f"Low references {low.shape} and high references {high.shape} differ in shape")

    low_mean = float(low.mean())
    high_mean = float(high.mean())
    span = high - low
    dead = span == 0
    safe_span = np.where(dead, 1.0, span)
    gain = np.where(dead, 1.0, (high_mean - low_mean) / safe_span)
    offset = low_mean - gain * low

    dead_pixels = tuple((int(r), int(c)) for r, c in zip(*np.nonzero(dead)))
    if dead_pixels:
        logger.warning(f"[CALIB] {len(dead_pixels)} dead pixel(s) with identical low/high response: "
                       f"{list(dead_pixels[:10])}")
    logger.info(f"[CALIB] Two-point calibration from {len(low_frames)} low / {len(high_frames)} high frames")
    return CalibrationField(gain_hat=gain, offset_hat=offset, dead_pixels=dead_pixels)


def target_image(corrected: np.ndarray) -> np.ndarray:
    """3x3 local mean with edge replication."""
    return uniform_filter(corrected, size=3, mode="nearest")


def _normalized(frame: np.ndarray, cal: CalibrationField, cfg: SbSolverConfig) -> Tuple[np.ndarray, np.ndarray]:
    frame = _check_frame(frame, cal)
    y = frame / cfg.data_scale
    return y, cal.gain_hat * y + cal.offset_hat / cfg.data_scale


def nn_objective(frame: np.ndarray, cal: CalibrationField, cfg: SbSolverConfig,
                 target: Optional[np.ndarray] = None) -> float:
    """alpha * sum (x_hat - T)^2 in normalized units; T is recomputed unless given."""
    _, x_hat = _normalized(frame, cal, cfg)
    t = target_image(x_hat) if target is None else target
    return float(cfg.alpha * np.sum((x_hat - t) ** 2))


def nn_gradient(frame: np.ndarray, cal: CalibrationField, cfg: SbSolverConfig,
                target: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(dJ/d gain_hat, dJ/d offset_hat) with the target held constant."""
    y, x_hat = _normalized(frame, cal, cfg)
    t = target_image(x_hat) if target is None else target
    residual = 2.0 * cfg.alpha * (x_hat - t)
    return residual * y, residual / cfg.data_scale


def fa_learning_rate(frame: np.ndarray, cal: CalibrationField, cfg: SbSolverConfig) -> np.ndarray:
    """mu0 / (1 + k * local variance of T), variance taken in display units."""
    _, x_hat = _normalized(frame, cal, cfg)
    t = target_image(x_hat) * cfg.data_scale
    mean = uniform_filter(t, size=3, mode="nearest")
    variance = np.maximum(uniform_filter(t * t, size=3, mode="nearest") - mean * mean, 0.0)
    return cfg.mu0 / (1.0 + cfg.fa_variance_gain * variance)


def _descend(cal: CalibrationField, grad_gain: np.ndarray, grad_offset: np.ndarray,
             rate, cfg: SbSolverConfig) -> CalibrationField:
    # offset steps are taken in normalized units, hence the data_scale^2 factor
    return CalibrationField(
        gain_hat=cal.gain_hat - rate * grad_gain,
        offset_hat=cal.offset_hat - rate * cfg.data_scale ** 2 * grad_offset,
        dead_pixels=cal.dead_pixels,
    )


def nn_fpnr_update(frame: np.ndarray, cal: CalibrationField, cfg: SbSolverConfig) -> CalibrationField:
    cfg.check_for("nn")
    grad_gain, grad_offset = nn_gradient(frame, cal, cfg)
    return _descend(cal, grad_gain, grad_offset, cfg.mu0, cfg)


def fa_fpnr_update(frame: np.ndarray, cal: CalibrationField, cfg: SbSolverConfig) -> CalibrationField:
    cfg.check_for("fa")
    grad_gain, grad_offset = nn_gradient(frame, cal, cfg)
    return _descend(cal, grad_gain, grad_offset, fa_learning_rate(frame, cal, cfg), cfg)


def _forward_differences(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Forward differences with replicate boundary (last difference is zero)."""
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :-1] = x[:, 1:] - x[:, :-1]
    dy[:-1, :] = x[1:, :] - x[:-1, :]
    return dx, dy


def tv_objective(frame: np.ndarray, cal: CalibrationField, cfg: SbSolverConfig) -> float:
    """lambda * sum phi(dx x_hat) + phi(dy x_hat), phi(t) = sqrt(t^2 + eps^2)."""
    _, x_hat = _normalized(frame, cal, cfg)
    dx, dy = _forward_differences(x_hat)
    eps2 = cfg.tv_epsilon ** 2
    return float(cfg.lam * (np.sqrt(dx * dx + eps2).sum() + np.sqrt(dy * dy + eps2).sum()))


def tv_gradient(frame: np.ndarray, cal: CalibrationField, cfg: SbSolverConfig) -> Tuple[np.ndarray, np.ndarray]:
    """(dJ/d gain_hat, dJ/d offset_hat) of the smoothed TV objective."""
    y, x_hat = _normalized(frame, cal, cfg)
    dx, dy = _forward_differences(x_hat)
    eps2 = cfg.tv_epsilon ** 2
    px = dx / np.sqrt(dx * dx + eps2)
    py = dy / np.sqrt(dy * dy + eps2)
    # adjoint of the forward difference: negative backward difference
    s = np.zeros_like(x_hat)
    s[:, :-1] -= px[:, :-1]
    s[:, 1:] += px[:, :-1]
    s[:-1, :] -= py[:-1, :]
    s[1:, :] += py[:-1, :]
    s *= cfg.lam
    return s * y, s / cfg.data_scale


def tv_fpnr_update(frame: np.ndarray, cal: CalibrationField, cfg: SbSolverConfig) -> CalibrationField:
    cfg.check_for("tv")
    grad_gain, grad_offset = tv_gradient(frame, cal, cfg)
    return _descend(cal, grad_gain, grad_offset, cfg.mu0, cfg)


UPDATES = {"nn": nn_fpnr_update, "fa": fa_fpnr_update, "tv": tv_fpnr_update}


class SceneBasedCorrector:
    """Carries a calibration field across a frame sequence.

    Each frame is corrected with the current field, then the field is updated
    from that frame.
    """

    def __init__(self, method: SceneMethod, cfg: Optional[SbSolverConfig] = None,
                 initial: Optional[CalibrationField] = None):
        if method not in UPDATES:
            raise ConfigurationError(f"Unknown scene-based method '{method}'")
        self.method = method
        self.cfg = cfg or SbSolverConfig.for_method(method)
        self.cfg.check_for(method)
        self.field = initial
        self.frames_seen = 0

    def reset(self) -> None:
        self.field = None
        self.frames_seen = 0

    def process(self, frame: np.ndarray) -> np.ndarray:
        frame = np.asarray(frame, dtype=np.float64)
        if self.field is None:
            self.field = CalibrationField.identity(*frame.shape)
        corrected = correct(frame, self.field)
        self.field = UPDATES[self.method](frame, self.field, self.cfg)
        self.frames_seen += 1
        return corrected

    def run(self, frames: Iterable[np.ndarray]) -> List[np.ndarray]:
        return [self.process(frame) for frame in frames]
