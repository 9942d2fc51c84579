"""Exception hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI reports for it.
"""
from typing import Optional, Sequence


class FpnrError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 1


class UsageError(FpnrError):
    """Wrong CLI usage: missing model, missing reference frames, bad flag combination."""

    exit_code = 2


class ConfigurationError(FpnrError, ValueError):
    """Inconsistent shapes, parameters or configuration values."""

    exit_code = 3


class MethodConfigError(ConfigurationError):
    """A correction method was given a configuration it cannot run with."""


class StaleTapeError(ConfigurationError):
    """backward() was called on a graph that has already been released."""


class NonFiniteError(ConfigurationError):
    """A forward op produced NaN or inf while finite checks are enabled."""


class UndefinedRoughnessError(ConfigurationError):
    """Roughness is undefined for an all-zero image."""


class DatasetError(ConfigurationError):
    """No usable source image for patch extraction."""


class TrainingDivergedError(FpnrError):
    """Loss became NaN or infinite during training."""

    exit_code = 3

    def __init__(self, batch_index: int, lr: float, loss: float):
        self.batch_index = batch_index
        self.lr = lr
        self.loss = loss
        super().__init__(
            f"Non-finite loss {loss!r} at batch {batch_index} (lr={lr:g})"
        )


class ImageIOError(FpnrError, OSError):
    """Base class for image reading/writing failures."""

    exit_code = 4


class MalformedHeaderError(ImageIOError):
    """Image header could not be parsed."""


class DimensionOverflowError(ImageIOError):
    """Declared dimensions or sample range are out of bounds."""


class TruncatedPayloadError(ImageIOError):
    """File ends before the declared payload is complete."""


class CheckpointError(FpnrError):
    """Base class for checkpoint failures."""

    exit_code = 4


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class TruncatedCheckpointError(CheckpointError):
    """Checkpoint header or payload is shorter than declared."""


class CheckpointShapeError(CheckpointError):
    """A stored tensor does not match the declared architecture."""

    exit_code = 3

    def __init__(
        self,
        tensor_name: str,
        expected: Optional[Sequence[int]],
        found: Optional[Sequence[int]],
    ):
        self.tensor_name = tensor_name
        self.expected = tuple(expected) if expected is not None else None
        self.found = tuple(found) if found is not None else None
        super().__init__(
            f"Checkpoint tensor '{tensor_name}' has shape {self.found}, "
            f"architecture expects {self.expected}"
        )
