"""Building blocks of a feature extraction block (FEB).

A FEB is a multi-grained convolution unit followed by a noise attention unit.
The default pairing is the coarse-fine unit (CfConvUnit) with the
spatial-channel attention unit (ScnauUnit); the single- and multi-scale
convolution units and the single-branch attention units exist for ablations.
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.errors import ConfigurationError
from app.tensor import (
    ConvSpec,
    Parameter,
    Tensor,
    activate,
    concat_channels,
    conv2d,
    crop_spatial,
    dense,
    elementwise,
    global_avg_pool,
    he_normal_init,
    max_pool2,
    pixel_shuffle,
)

SUBPIXEL_FACTOR = 2


class ConvLayer:
    """Convolution + activation with he-normal weights and zero bias."""

    def __init__(self, name: str, spec: ConvSpec, activation: str,
                 rng: np.random.Generator, dtype=np.float64):
        self.name = name
        self.spec = spec
        self.activation = activation
        self.weight = Parameter(
            he_normal_init(spec.weight_shape, spec.fan_in, rng, dtype).data, name=f"{name}.weight"
        )
        self.bias = Parameter(np.zeros(spec.out_channels, dtype=dtype), name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return activate(conv2d(x, self.weight, self.bias, self.spec), self.activation)

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]


class DenseLayer:
    """Fully connected layer + activation."""

    def __init__(self, name: str, n_in: int, n_out: int, activation: str,
                 rng: np.random.Generator, dtype=np.float64):
        self.name = name
        self.activation = activation
        self.weight = Parameter(he_normal_init((n_in, n_out), n_in, rng, dtype).data, name=f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out, dtype=dtype), name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return activate(dense(x, self.weight, self.bias), self.activation)

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]


class CfConvUnit:
    """Coarse-fine convolution: dilated, standard and sub-pixel branches fused by a 3x3 conv.

    The sub-pixel branch pools by 2 and shuffles back by 2, so every branch
    ends at the input extent and the three can be concatenated.
    """

    def __init__(self, name: str, channels: int, dilated: int, standard: int, subpixel: int,
                 rng: np.random.Generator, dtype=np.float64):
        r2 = SUBPIXEL_FACTOR * SUBPIXEL_FACTOR
        if subpixel % r2:
            raise ConfigurationError(f"Sub-pixel branch width {subpixel} not divisible by {r2}")
        self.dia_conv = ConvLayer(f"{name}.dia", ConvSpec.same(channels, dilated, 3, dilation=2), "relu", rng, dtype)
        self.std_conv_1 = ConvLayer(f"{name}.std1", ConvSpec.same(channels, standard, 3), "relu", rng, dtype)
        self.sp_conv = ConvLayer(f"{name}.sp", ConvSpec.same(channels, subpixel, 3), "relu", rng, dtype)
        self.concat_width = dilated + standard + subpixel // r2
        self.std_conv_2 = ConvLayer(f"{name}.std2", ConvSpec.same(self.concat_width, channels, 3), "relu", rng, dtype)

    def branches(self, x: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        height, width = x.shape[2], x.shape[3]
        dilated = self.dia_conv(x)
        standard = self.std_conv_1(x)
        subpixel = pixel_shuffle(self.sp_conv(max_pool2(x)), SUBPIXEL_FACTOR)
        # odd extents: pooling replicated the last row/column, drop it again
        subpixel = crop_spatial(subpixel, height, width)
        return dilated, standard, subpixel

    def __call__(self, x: Tensor) -> Tensor:
        return self.std_conv_2(concat_channels(list(self.branches(x))))

    def parameters(self) -> List[Parameter]:
        return [p for layer in (self.dia_conv, self.std_conv_1, self.sp_conv, self.std_conv_2)
                for p in layer.parameters()]


class MultiScaleConvUnit:
    """Parallel k x k convolutions, concatenated and fused; a single kernel is a plain conv."""

    def __init__(self, name: str, channels: int, branch_width: int, kernels: Sequence[int],
                 rng: np.random.Generator, dtype=np.float64):
        if len(kernels) == 1:
            self.convs = [ConvLayer(f"{name}.k{kernels[0]}", ConvSpec.same(channels, channels, kernels[0]),
                                    "relu", rng, dtype)]
            self.fuse: Optional[ConvLayer] = None
        else:
            self.convs = [ConvLayer(f"{name}.k{k}", ConvSpec.same(channels, branch_width, k), "relu", rng, dtype)
                          for k in kernels]
            self.fuse = ConvLayer(f"{name}.fuse", ConvSpec.same(branch_width * len(kernels), channels, 3),
                                  "relu", rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if self.fuse is None:
            return self.convs[0](x)
        return self.fuse(concat_channels([conv(x) for conv in self.convs]))

    def parameters(self) -> List[Parameter]:
        layers = self.convs + ([self.fuse] if self.fuse is not None else [])
        return [p for layer in layers for p in layer.parameters()]


class ScnauUnit:
    """Spatial-channel noise attention: x_sc = spatial_mask * (channel_mask (x) x).

    Both masks come out of a sigmoid, so the unit only ever attenuates its
    identity-mapped trunk.
    """

    def __init__(self, name: str, channels: int, spatial_hidden: int, dense_hidden: Tuple[int, int],
                 rng: np.random.Generator, dtype=np.float64,
                 use_spatial: bool = True, use_channel: bool = True):
        self.use_spatial = use_spatial
        self.use_channel = use_channel
        self.spatial_layers: List[ConvLayer] = []
        self.channel_layers: List[DenseLayer] = []
        if use_spatial:
            self.spatial_layers = [
                ConvLayer(f"{name}.spatial1", ConvSpec.same(channels, channels, 3), "relu", rng, dtype),
                ConvLayer(f"{name}.spatial2", ConvSpec.same(channels, spatial_hidden, 3), "relu", rng, dtype),
                ConvLayer(f"{name}.spatial3", ConvSpec.same(spatial_hidden, channels, 1), "sigmoid", rng, dtype),
            ]
        if use_channel:
            h1, h2 = dense_hidden
            self.channel_layers = [
                DenseLayer(f"{name}.channel1", channels, h1, "relu", rng, dtype),
                DenseLayer(f"{name}.channel2", h1, h2, "relu", rng, dtype),
                DenseLayer(f"{name}.channel3", h2, channels, "sigmoid", rng, dtype),
            ]
        # test/debug hooks
        self.mask_override: Optional[float] = None
        self.capture_masks = False
        self.last_masks: Optional[Tuple[Optional[np.ndarray], Optional[np.ndarray]]] = None

    def spatial_mask(self, x: Tensor) -> Tensor:
        if self.mask_override is not None:
            return Tensor(np.full(x.shape, self.mask_override, dtype=x.dtype))
        out = x
        for layer in self.spatial_layers:
            out = layer(out)
        return out

    def channel_mask(self, x: Tensor) -> Tensor:
        if self.mask_override is not None:
            return Tensor(np.full(x.shape[:2], self.mask_override, dtype=x.dtype))
        out = global_avg_pool(x)
        for layer in self.channel_layers:
            out = layer(out)
        return out

    def __call__(self, x: Tensor) -> Tensor:
        spatial = self.spatial_mask(x) if self.use_spatial else None
        channel = self.channel_mask(x) if self.use_channel else None
        if self.capture_masks:
            self.last_masks = (
                None if spatial is None else spatial.data.copy(),
                None if channel is None else channel.data.copy(),
            )
        out = x
        if channel is not None:
            out = elementwise(out, channel, "mul", broadcast="channel_scalar")
        if spatial is not None:
            out = elementwise(spatial, out, "mul")
        return out

    def parameters(self) -> List[Parameter]:
        return [p for layer in self.spatial_layers + self.channel_layers for p in layer.parameters()]
