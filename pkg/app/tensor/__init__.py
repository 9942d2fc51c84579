# Tensor engine package

from app.tensor.engine import (
    GradientSink,
    Parameter,
    Tensor,
    backward,
    gradient_sink,
    no_grad,
    resolve_dtype,
)
from app.tensor.init import he_normal_init, rng_for
from app.tensor.ops import (
    ConvSpec,
    activate,
    concat_channels,
    conv2d,
    crop_spatial,
    dense,
    elementwise,
    global_avg_pool,
    max_pool2,
    mse_loss,
    pixel_shuffle,
    pixel_unshuffle,
    reduce_sum,
    split_channels,
)
from app.tensor.optim import Adam, adam_step, step_decay

__all__ = [
    "Adam",
    "ConvSpec",
    "GradientSink",
    "Parameter",
    "Tensor",
    "activate",
    "adam_step",
    "backward",
    "concat_channels",
    "conv2d",
    "crop_spatial",
    "dense",
    "elementwise",
    "global_avg_pool",
    "gradient_sink",
    "he_normal_init",
    "max_pool2",
    "mse_loss",
    "no_grad",
    "pixel_shuffle",
    "pixel_unshuffle",
    "reduce_sum",
    "resolve_dtype",
    "rng_for",
    "split_channels",
    "step_decay",
]
