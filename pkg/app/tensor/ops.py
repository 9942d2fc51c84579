"""Forward ops with their reverse-mode gradients.

Layout is NCHW for feature maps and [N, M] for dense activations. Convolution is
cross-correlation (no kernel flip) with symmetric zero padding.
"""
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, PositiveInt, NonNegativeInt
from scipy.special import expit

from app.errors import ConfigurationError
from app.tensor.engine import Tensor, record

ACTIVATIONS = ("relu", "sigmoid", "linear")


class ConvSpec(BaseModel):
    """Geometry of one 2-D convolution layer."""

    model_config = ConfigDict(frozen=True)

    in_channels: PositiveInt
    out_channels: PositiveInt
    kernel: Tuple[PositiveInt, PositiveInt] = (3, 3)
    dilation: PositiveInt = 1
    stride: PositiveInt = 1
    padding: NonNegativeInt = 0

    @classmethod
    def same(cls, in_channels: int, out_channels: int, kernel: int = 3, dilation: int = 1) -> "ConvSpec":
        """Stride-1 spec whose zero padding preserves the spatial extent."""
        return cls(
            in_channels=in_channels,
            out_channels=out_channels,
            kernel=(kernel, kernel),
            dilation=dilation,
            padding=dilation * (kernel - 1) // 2,
        )

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel[0], self.kernel[1])

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel[0] * self.kernel[1]

    def output_extent(self, height: int, width: int) -> Tuple[int, int]:
        extents = []
        for size, k in ((height, self.kernel[0]), (width, self.kernel[1])):
            span = size + 2 * self.padding - self.dilation * (k - 1) - 1
            out = span // self.stride + 1 if span >= 0 else 0
            if out < 1:
                raise ConfigurationError(
                    f"Convolution {self.kernel} (dilation {self.dilation}, padding {self.padding}) "
                    f"does not fit input extent {height}x{width}"
                )
            extents.append(out)
        return extents[0], extents[1]


def _as_tensor(value: Union[Tensor, np.ndarray]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_4d(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ConfigurationError(f"{op} expects a [B,C,H,W] tensor, got shape {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], spec: ConvSpec) -> Tensor:
    _check_4d(x, "conv2d")
    batch, channels, height, width = x.shape
    if channels != spec.in_channels:
        raise ConfigurationError(
            f"conv2d input has {channels} channels, spec expects in_channels={spec.in_channels}"
        )
    if weight.shape != spec.weight_shape:
        raise ConfigurationError(
            f"conv2d weight shape {weight.shape} does not match spec {spec.weight_shape} "
            f"[out_channels, in_channels, kh, kw]"
        )
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ConfigurationError(
            f"conv2d bias shape {bias.shape} does not match out_channels={spec.out_channels}"
        )
    out_h, out_w = spec.output_extent(height, width)
    kh, kw = spec.kernel
    d, s, p = spec.dilation, spec.stride, spec.padding

    padded = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    w = weight.data
    windows = []
    out = np.zeros((batch, spec.out_channels, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            rows = slice(i * d, i * d + s * (out_h - 1) + 1, s)
            cols = slice(j * d, j * d + s * (out_w - 1) + 1, s)
            windows.append((i, j, rows, cols))
            out += np.einsum("bchw,oc->bohw", padded[:, :, rows, cols], w[:, :, i, j], optimize=True)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def _backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            grad_padded = np.zeros_like(padded)
            for i, j, rows, cols in windows:
                grad_padded[:, :, rows, cols] += np.einsum(
                    "bohw,oc->bchw", grad, w[:, :, i, j], optimize=True
                )
            x.accumulate(grad_padded[:, :, p:p + height, p:p + width])
        if weight.requires_grad:
            grad_w = np.empty_like(w)
            for i, j, rows, cols in windows:
                grad_w[:, :, i, j] = np.einsum(
                    "bohw,bchw->oc", grad, padded[:, :, rows, cols], optimize=True
                )
            weight.accumulate(grad_w)
        if bias is not None and bias.requires_grad:
            bias.accumulate(grad.sum(axis=(0, 2, 3)))

    parents = [x, weight] + ([bias] if bias is not None else [])
    return record(out, parents, "conv2d", _backward)


def _shuffle(data: np.ndarray, r: int) -> np.ndarray:
    batch, channels, height, width = data.shape
    c = channels // (r * r)
    out = data.reshape(batch, c, r, r, height, width).transpose(0, 1, 4, 2, 5, 3)
    return out.reshape(batch, c, height * r, width * r)


def _unshuffle(data: np.ndarray, r: int) -> np.ndarray:
    batch, channels, height, width = data.shape
    h, w = height // r, width // r
    out = data.reshape(batch, channels, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
    return out.reshape(batch, channels * r * r, h, w)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange [B, C*r^2, H, W] into [B, C, r*H, r*W]."""
    _check_4d(x, "pixel_shuffle")
    if r < 1:
        raise ConfigurationError(f"pixel_shuffle factor must be positive, got {r}")
    if x.shape[1] % (r * r) != 0:
        raise ConfigurationError(
            f"pixel_shuffle needs channels divisible by r^2={r * r}, got {x.shape[1]}"
        )

    def _backward(grad: np.ndarray) -> None:
        x.accumulate(_unshuffle(grad, r))

    return record(_shuffle(x.data, r), [x], "pixel_shuffle", _backward)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse rearrangement of pixel_shuffle: [B, C, r*H, r*W] -> [B, C*r^2, H, W]."""
    _check_4d(x, "pixel_unshuffle")
    if r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise ConfigurationError(
            f"pixel_unshuffle needs spatial extents divisible by r={r}, got {x.shape[2:]}"
        )

    def _backward(grad: np.ndarray) -> None:
        x.accumulate(_shuffle(grad, r))

    return record(_unshuffle(x.data, r), [x], "pixel_unshuffle", _backward)


def max_pool2(x: Tensor) -> Tensor:
    """2x2/stride-2 max pooling; odd extents replicate the last row/column."""
    _check_4d(x, "max_pool2")
    batch, channels, height, width = x.shape
    pad_h, pad_w = height % 2, width % 2
    data = x.data
    if pad_h or pad_w:
        data = np.pad(data, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    out_h, out_w = data.shape[2] // 2, data.shape[3] // 2
    windows = (
        data.reshape(batch, channels, out_h, 2, out_w, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, out_h, out_w, 4)
    )
    # argmax returns the first maximum, i.e. row-major tie-break inside the window
    winners = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, winners[..., None], axis=-1)[..., 0]

    def _backward(grad: np.ndarray) -> None:
        routed = np.zeros(windows.shape, dtype=grad.dtype)
        np.put_along_axis(routed, winners[..., None], grad[..., None], axis=-1)
        full = (
            routed.reshape(batch, channels, out_h, out_w, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, channels, 2 * out_h, 2 * out_w)
        )
        if pad_w:
            full[:, :, :, width - 1] += full[:, :, :, width]
            full = full[:, :, :, :width]
        if pad_h:
            full[:, :, height - 1, :] += full[:, :, height, :]
            full = full[:, :, :height, :]
        x.accumulate(np.ascontiguousarray(full))

    return record(out, [x], "max_pool2", _backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel mean over all spatial positions: [B,C,H,W] -> [B,C]."""
    _check_4d(x, "global_avg_pool")
    height, width = x.shape[2], x.shape[3]

    def _backward(grad: np.ndarray) -> None:
        spread = np.broadcast_to(grad[:, :, None, None] / (height * width), x.shape)
        x.accumulate(np.array(spread))

    return record(x.data.mean(axis=(2, 3)), [x], "global_avg_pool", _backward)


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor]) -> Tensor:
    """Affine map x @ W + b with W shaped [N, M]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ConfigurationError(
            f"dense input {x.shape} incompatible with weight {weight.shape} (expects [B,N] @ [N,M])"
        )
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ConfigurationError(f"dense bias {bias.shape} does not match M={weight.shape[1]}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def _backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(grad @ weight.data.T)
        if weight.requires_grad:
            weight.accumulate(x.data.T @ grad)
        if bias is not None and bias.requires_grad:
            bias.accumulate(grad.sum(axis=0))

    parents = [x, weight] + ([bias] if bias is not None else [])
    return record(out, parents, "dense", _backward)


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "linear":
        return x
    if kind == "relu":
        mask = x.data > 0
        out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

        def _backward(grad: np.ndarray) -> None:
            x.accumulate(grad * mask)

        return record(out, [x], "relu", _backward)
    if kind == "sigmoid":
        # kept strictly inside (0, 1) so masks never fully open or close
        finfo = np.finfo(x.dtype)
        out = np.clip(expit(x.data), finfo.tiny, 1.0 - finfo.epsneg).astype(x.dtype, copy=False)

        def _backward(grad: np.ndarray) -> None:
            x.accumulate(grad * out * (1.0 - out))

        return record(out, [x], "sigmoid", _backward)
    raise ConfigurationError(f"Unknown activation '{kind}', expected one of {ACTIVATIONS}")


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    if not inputs:
        raise ConfigurationError("concat_channels needs at least one input")
    for t in inputs:
        _check_4d(t, "concat_channels")
    reference = inputs[0].shape
    for t in inputs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (reference[0], reference[2], reference[3]):
            raise ConfigurationError(
                f"concat_channels needs identical B,H,W; got {reference} and {t.shape}"
            )
    if len(inputs) == 1:
        return inputs[0]
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])

    def _backward(grad: np.ndarray) -> None:
        for t, start, stop in zip(inputs, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t.accumulate(np.ascontiguousarray(grad[:, start:stop]))

    out = np.concatenate([t.data for t in inputs], axis=1)
    return record(out, list(inputs), "concat_channels", _backward)


def split_channels(x: Tensor, sizes: Sequence[int]) -> List[Tensor]:
    """Inverse of concat_channels for the given channel counts."""
    _check_4d(x, "split_channels")
    if sum(sizes) != x.shape[1]:
        raise ConfigurationError(f"split sizes {list(sizes)} do not sum to {x.shape[1]} channels")
    pieces = []
    start = 0
    for size in sizes:
        stop = start + size

        def _backward(grad: np.ndarray, start=start, stop=stop) -> None:
            full = np.zeros_like(x.data)
            full[:, start:stop] = grad
            x.accumulate(full)

        pieces.append(record(np.ascontiguousarray(x.data[:, start:stop]), [x], "split_channels", _backward))
        start = stop
    return pieces


def elementwise(a: Tensor, b: Tensor, op: str, broadcast: str = "none") -> Tensor:
    """Elementwise mul/add; `channel_scalar` broadcasts b[B,C] over a[B,C,H,W]."""
    if op not in ("mul", "add"):
        raise ConfigurationError(f"Unknown elementwise op '{op}'")
    if broadcast == "none":
        if a.shape != b.shape:
            raise ConfigurationError(f"elementwise {op} needs equal shapes, got {a.shape} and {b.shape}")
        b_view = b.data
    elif broadcast == "channel_scalar":
        if a.ndim != 4 or b.shape != a.shape[:2]:
            raise ConfigurationError(
                f"channel_scalar broadcast needs b shaped [B,C]={a.shape[:2]}, got {b.shape}"
            )
        b_view = b.data[:, :, None, None]
    else:
        raise ConfigurationError(f"Unknown broadcast mode '{broadcast}'")

    out = a.data * b_view if op == "mul" else a.data + b_view

    def _reduce(grad: np.ndarray) -> np.ndarray:
        return grad.sum(axis=(2, 3)) if broadcast == "channel_scalar" else grad

    def _backward(grad: np.ndarray) -> None:
        if op == "mul":
            if a.requires_grad:
                a.accumulate(grad * b_view)
            if b.requires_grad:
                b.accumulate(_reduce(grad * a.data))
        else:
            if a.requires_grad:
                a.accumulate(grad)
            if b.requires_grad:
                b.accumulate(_reduce(grad))

    return record(out, [a, b], f"elementwise_{op}", _backward)


def reduce_sum(x: Tensor) -> Tensor:
    def _backward(grad: np.ndarray) -> None:
        x.accumulate(np.full_like(x.data, grad.reshape(-1)[0]))

    return record(np.array(x.data.sum(), dtype=x.dtype), [x], "reduce_sum", _backward)


def mse_loss(prediction: Tensor, target: Union[Tensor, np.ndarray]) -> Tensor:
    """Mean squared error against a constant target."""
    target_data = _as_tensor(target).data
    if prediction.shape != target_data.shape:
        raise ConfigurationError(
            f"mse_loss shapes differ: prediction {prediction.shape}, target {target_data.shape}"
        )
    residual = prediction.data - target_data
    value = np.array(np.mean(residual * residual), dtype=prediction.dtype)

    def _backward(grad: np.ndarray) -> None:
        prediction.accumulate(grad.reshape(-1)[0] * 2.0 * residual / residual.size)

    return record(value, [prediction], "mse_loss", _backward)


def crop_spatial(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left height x width window of every feature map."""
    _check_4d(x, "crop_spatial")
    if x.shape[2] == height and x.shape[3] == width:
        return x
    if height > x.shape[2] or width > x.shape[3]:
        raise ConfigurationError(f"Cannot crop {x.shape[2:]} to larger extent {(height, width)}")

    def _backward(grad: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[:, :, :height, :width] = grad
        x.accumulate(full)

    return record(np.ascontiguousarray(x.data[:, :, :height, :width]), [x], "crop_spatial", _backward)
