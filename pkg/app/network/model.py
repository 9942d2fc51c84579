"""Cascade residual attention network.

    gain_hat   = gain_subnet(y)
    C_G        = gain_hat * y
    offset_hat = offset_subnet(C_G)
    x_hat      = C_G + offset_hat

Each subnetwork is a 3x3 head conv lifting 1 -> C channels, a chain of feature
extraction blocks, and a 1x1 linear output conv back to one channel.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.errors import ConfigurationError
from app.network.units import CfConvUnit, ConvLayer, MultiScaleConvUnit, ScnauUnit
from app.tensor import ConvSpec, Parameter, Tensor, elementwise, no_grad, resolve_dtype, rng_for

logger = logging.getLogger(__name__)

BLOCK_KERNELS = {"conv3": (3,), "conv3_5": (3, 5), "conv3_5_7": (3, 5, 7)}


class ModelArchitecture(BaseModel):
    """Everything that determines the parameter layout of a CascadeModel."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    width_scale: float = Field(1.0, gt=0)
    num_blocks: int = Field(5, ge=1)
    block: Literal["cf_conv", "conv3", "conv3_5", "conv3_5_7"] = "cf_conv"
    attention: Literal["scnau", "spatial", "channel", "none"] = "scnau"
    identity_init: bool = True
    seed: int = 0

    @field_validator("width_scale", mode="before")
    @classmethod
    def _parse_fraction(cls, value):
        if isinstance(value, str):
            try:
                return float(Fraction(value))
            except (ValueError, ZeroDivisionError) as e:
                raise ValueError(f"width_scale must be a positive rational, got {value!r}") from e
        return value

    def scaled(self, channels: int) -> int:
        """Channel count scaled by width_scale; multiple of 4, never below 8."""
        return max(8, int(round(channels * self.width_scale / 4.0)) * 4)

    @property
    def features(self) -> int:
        return self.scaled(64)


class Subnetwork:
    """Head conv, feature extraction blocks, 1x1 linear output conv."""

    def __init__(self, name: str, arch: ModelArchitecture, output_bias: float,
                 rng: np.random.Generator, dtype=np.float64):
        self.name = name
        c = arch.features
        self.head = ConvLayer(f"{name}.head", ConvSpec.same(1, c, 3), "relu", rng, dtype)
        self.blocks: List[Tuple[object, Optional[ScnauUnit]]] = []
        for index in range(arch.num_blocks):
            prefix = f"{name}.feb{index}"
            if arch.block == "cf_conv":
                conv_unit = CfConvUnit(f"{prefix}.cf", c, arch.scaled(32), arch.scaled(64),
                                       arch.scaled(32), rng, dtype)
            else:
                conv_unit = MultiScaleConvUnit(f"{prefix}.ms", c, arch.scaled(32),
                                               BLOCK_KERNELS[arch.block], rng, dtype)
            attention = None
            if arch.attention != "none":
                attention = ScnauUnit(
                    f"{prefix}.att", c, arch.scaled(32), (arch.scaled(256), arch.scaled(512)), rng, dtype,
                    use_spatial=arch.attention in ("scnau", "spatial"),
                    use_channel=arch.attention in ("scnau", "channel"),
                )
            self.blocks.append((conv_unit, attention))
        self.output = ConvLayer(f"{name}.out", ConvSpec.same(c, 1, 1), "linear", rng, dtype)
        if arch.identity_init:
            self.output.weight.value = np.zeros_like(self.output.weight.value)
        self.output.bias.value = np.full_like(self.output.bias.value, output_bias)

    def __call__(self, x: Tensor) -> Tensor:
        features = self.head(x)
        for conv_unit, attention in self.blocks:
            features = conv_unit(features)
            if attention is not None:
                features = attention(features)
        return self.output(features)

    @property
    def attention_units(self) -> List[ScnauUnit]:
        return [attention for _, attention in self.blocks if attention is not None]

    def parameters(self) -> List[Parameter]:
        params = self.head.parameters()
        for conv_unit, attention in self.blocks:
            params += conv_unit.parameters()
            if attention is not None:
                params += attention.parameters()
        return params + self.output.parameters()


class CascadeModel:
    """Parameter container for the gain and offset subnetworks."""

    def __init__(self, architecture: Optional[ModelArchitecture] = None, precision: Optional[str] = None):
        self.architecture = architecture or ModelArchitecture()
        self.dtype = resolve_dtype(precision)
        rng = rng_for(self.architecture.seed, 0)
        self.gain_subnet = Subnetwork("gain", self.architecture, 1.0, rng, self.dtype)
        self.offset_subnet = Subnetwork("offset", self.architecture, 0.0, rng, self.dtype)

    @property
    def precision(self) -> str:
        return self.dtype.name

    def parameters(self) -> List[Parameter]:
        return self.gain_subnet.parameters() + self.offset_subnet.parameters()

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def set_precision(self, precision: str) -> None:
        self.dtype = resolve_dtype(precision)
        for p in self.parameters():
            p.astype(self.dtype)


@dataclass
class CascadeOutput:
    x_hat: Tensor
    gain_hat: Tensor
    offset_hat: Tensor
    gain_corrected: Tensor


def _as_batch(y: Union[np.ndarray, Tensor], dtype) -> Tensor:
    if isinstance(y, Tensor):
        tensor = y if y.dtype == dtype else Tensor(y.data, dtype=dtype)
    else:
        array = np.asarray(y, dtype=dtype)
        if array.ndim == 2:
            array = array[None, None]
        tensor = Tensor(array)
    if tensor.ndim != 4 or tensor.shape[1] != 1:
        raise ConfigurationError(f"Model input must be an image or [B,1,H,W] tensor, got {tensor.shape}")
    if tensor.shape[2] < 2 or tensor.shape[3] < 2:
        raise ConfigurationError(
            f"Input extent {tensor.shape[2]}x{tensor.shape[3]} too small for the pooling path (needs >= 2x2)"
        )
    return tensor


def model_forward(y: Union[np.ndarray, Tensor], model: CascadeModel) -> CascadeOutput:
    """Run both subnetworks; returns the restored image and both calibration maps."""
    observed = _as_batch(y, model.dtype)
    gain_hat = model.gain_subnet(observed)
    gain_corrected = elementwise(gain_hat, observed, "mul")
    offset_hat = model.offset_subnet(gain_corrected)
    x_hat = elementwise(gain_corrected, offset_hat, "add")
    return CascadeOutput(x_hat=x_hat, gain_hat=gain_hat, offset_hat=offset_hat, gain_corrected=gain_corrected)


def restore_image(image: np.ndarray, model: CascadeModel) -> np.ndarray:
    """Single-frame inference on a 2-D image, returned in float64 display units."""
    with no_grad():
        output = model_forward(image, model)
    return output.x_hat.data[0, 0].astype(np.float64)
