"""Image reading and writing.

Two formats: binary portable graymap (P5, 8-bit or 16-bit big-endian samples,
coded by Pillow) and raw little-endian float32 planes with a JSON shape sidecar. Rasters are
returned as float64 arrays in display units.
"""
import io
import json
import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from app.config import config
from app.errors import (
    DimensionOverflowError,
    ImageIOError,
    MalformedHeaderError,
    TruncatedPayloadError,
)

logger = logging.getLogger(__name__)

PGM_SUFFIXES = (".pgm", ".pnm")
RAW_SUFFIXES = (".f32", ".raw")
RAW_DTYPE = np.dtype("<f4")

# extents are bounded by FPNR_MAX_PIXELS instead of the decompression-bomb guard
Image.MAX_IMAGE_PIXELS = None

PathLike = Union[str, Path]


def quantize(image: np.ndarray, maxval: int = 255) -> np.ndarray:
    """Clip to [0, maxval] and round half away from zero."""
    clipped = np.clip(np.asarray(image, dtype=np.float64), 0.0, float(maxval))
    return np.floor(clipped + 0.5)


def _check_extent(height: int, width: int) -> None:
    if height <= 0 or width <= 0:
        raise DimensionOverflowError(f"Image extent must be positive, got {height}x{width}")
    if height * width > config.MAX_PIXELS:
        raise DimensionOverflowError(
            f"Image {height}x{width} exceeds the {config.MAX_PIXELS:,}-pixel limit"
        )


def decode_pgm(raw: bytes) -> np.ndarray:
    # Pillow also opens plain (P2) and colour variants; only binary graymaps are accepted
    if raw[:2] != b"P5":
        raise MalformedHeaderError("Not a binary graymap: missing 'P5' magic")
    try:
        image = Image.open(io.BytesIO(raw), formats=["PPM"])
    except (UnidentifiedImageError, SyntaxError, ValueError) as e:
        raise MalformedHeaderError(f"Invalid graymap header: {e}") from e
    width, height = image.size
    _check_extent(height, width)
    try:
        image.load()
    except (OSError, ValueError) as e:
        raise TruncatedPayloadError(f"Graymap payload too short for {width}x{height}: {e}") from e
    return np.asarray(image, dtype=np.float64)


def encode_pgm(image: np.ndarray, maxval: int = 255) -> bytes:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ImageIOError(f"Graymap export needs a 2-D image, got shape {image.shape}")
    if maxval not in (255, 65535):
        raise DimensionOverflowError(f"Graymap maxval must be 255 or 65535, got {maxval}")
    samples = quantize(image, maxval)
    # mode "L" is written as 8-bit P5, mode "I" as 16-bit big-endian P5
    picture = Image.fromarray(samples.astype(np.uint8 if maxval == 255 else np.int32))
    buffer = io.BytesIO()
    picture.save(buffer, format="PPM")
    return buffer.getvalue()


def read_pgm(path: PathLike) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def write_pgm(path: PathLike, image: np.ndarray, maxval: int = 255) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pgm(image, maxval))
    return path


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_raw_f32(path: PathLike, image: np.ndarray) -> Path:
    path = Path(path)
    image = np.asarray(image)
    if image.ndim != 2:
        raise ImageIOError(f"Raw export needs a 2-D image, got shape {image.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(image, dtype=RAW_DTYPE).tobytes())
    meta = {"height": int(image.shape[0]), "width": int(image.shape[1]), "dtype": RAW_DTYPE.str}
    sidecar_path(path).write_text(json.dumps(meta, indent=2))
    return path


def read_raw_f32(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        meta = json.loads(sidecar_path(path).read_text())
        height, width = int(meta["height"]), int(meta["width"])
    except FileNotFoundError as e:
        raise MalformedHeaderError(f"Missing shape sidecar {sidecar_path(path)}") from e
    except (ValueError, KeyError, TypeError) as e:
        raise MalformedHeaderError(f"Invalid shape sidecar for {path}: {e}") from e
    if meta.get("dtype", RAW_DTYPE.str) != RAW_DTYPE.str:
        raise MalformedHeaderError(f"Unsupported raw dtype {meta.get('dtype')!r}")
    _check_extent(height, width)
    raw = path.read_bytes()
    needed = height * width * RAW_DTYPE.itemsize
    if len(raw) < needed:
        raise TruncatedPayloadError(f"Raw payload has {len(raw)} bytes, {needed} expected")
    if len(raw) > needed:
        raise MalformedHeaderError(f"Raw payload has {len(raw) - needed} bytes beyond the declared extent")
    return np.frombuffer(raw, dtype=RAW_DTYPE).reshape(height, width).astype(np.float64)


def read_image(path: PathLike) -> np.ndarray:
    """Dispatch on suffix: .pgm/.pnm graymap, .f32/.raw float plane."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in PGM_SUFFIXES:
        image = read_pgm(path)
    elif suffix in RAW_SUFFIXES:
        image = read_raw_f32(path)
    else:
        raise ImageIOError(f"Unsupported image format '{suffix}' for {path}")
    logger.debug(f"[IO] Read {path} ({image.shape[0]}x{image.shape[1]})")
    return image


def write_image(path: PathLike, image: np.ndarray, bit_depth: int = 8) -> Path:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in PGM_SUFFIXES:
        written = write_pgm(path, image, maxval=255 if bit_depth == 8 else 65535)
    elif suffix in RAW_SUFFIXES:
        written = write_raw_f32(path, image)
    else:
        raise ImageIOError(f"Unsupported image format '{suffix}' for {path}")
    logger.debug(f"[IO] Wrote {path}")
    return written
