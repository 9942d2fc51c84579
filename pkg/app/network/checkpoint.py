"""Checkpoint file format.

    b"FPNRCKPT" | version (1 byte) | header length (uint32 LE) | JSON header | payloads

The JSON header holds the architecture descriptor and, per tensor, its name,
shape and byte offset into the payload section. Payloads are little-endian
float32 in header order.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from app.errors import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointShapeError,
    TruncatedCheckpointError,
)
from app.network.model import CascadeModel, ModelArchitecture

logger = logging.getLogger(__name__)

MAGIC = b"FPNRCKPT"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")
_PREFIX = len(MAGIC) + 1 + 4


def save_checkpoint(model: CascadeModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    entries = []
    payloads = []
    offset = 0
    for param in model.parameters():
        blob = np.ascontiguousarray(param.value, dtype=PAYLOAD_DTYPE).tobytes()
        entries.append({"name": param.name, "shape": list(param.shape), "offset": offset, "nbytes": len(blob)})
        payloads.append(blob)
        offset += len(blob)

    header = {
        "architecture": model.architecture.model_dump(),
        "precision": model.precision,
        "payload_dtype": PAYLOAD_DTYPE.str,
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BI", FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for blob in payloads:
            f.write(blob)
    logger.info(f"[CKPT] Saved {len(entries)} tensors ({offset:,} payload bytes) to {path}")
    return path


def read_header(raw: bytes) -> dict:
    head = raw[:len(MAGIC)]
    if head != MAGIC[:len(head)]:
        raise CheckpointMagicError("Not a checkpoint file: magic bytes mismatch")
    if len(raw) < _PREFIX:
        raise TruncatedCheckpointError(f"Checkpoint truncated inside the {_PREFIX}-byte prefix")
    version, header_len = struct.unpack("<BI", raw[len(MAGIC):_PREFIX])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}")
    if len(raw) < _PREFIX + header_len:
        raise TruncatedCheckpointError(
            f"Checkpoint header declares {header_len} bytes, only {len(raw) - _PREFIX} present"
        )
    try:
        return json.loads(raw[_PREFIX:_PREFIX + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Checkpoint header is not valid JSON: {e}") from e


def load_checkpoint(
    path: Union[str, Path],
    architecture: Optional[ModelArchitecture] = None,
    precision: Optional[str] = None,
) -> CascadeModel:
    """Load a checkpoint; `architecture` declares the expected layout (default: the stored one)."""
    path = Path(path)
    raw = path.read_bytes()
    header = read_header(raw)
    header_len = struct.unpack("<I", raw[len(MAGIC) + 1:_PREFIX])[0]
    payload = raw[_PREFIX + header_len:]

    arch = architecture or ModelArchitecture(**header["architecture"])
    model = CascadeModel(arch, precision=precision or header.get("precision"))
    stored = {entry["name"]: entry for entry in header["tensors"]}

    for param in model.parameters():
        entry = stored.get(param.name)
        if entry is None:
            raise CheckpointShapeError(param.name, param.shape, None)
        if tuple(entry["shape"]) != param.shape:
            raise CheckpointShapeError(param.name, param.shape, entry["shape"])
    extra = [name for name in stored if name not in model.named_parameters()]
    if extra:
        raise CheckpointShapeError(extra[0], None, stored[extra[0]]["shape"])

    for param in model.parameters():
        entry = stored[param.name]
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(payload):
            raise TruncatedCheckpointError(
                f"Payload of '{param.name}' ends at byte {stop}, file has {len(payload)} payload bytes"
            )
        values = np.frombuffer(payload[start:stop], dtype=PAYLOAD_DTYPE).reshape(param.shape)
        param.value = values.astype(model.dtype)

    logger.info(f"[CKPT] Loaded {len(stored)} tensors from {path} (width_scale={arch.width_scale})")
    return model
