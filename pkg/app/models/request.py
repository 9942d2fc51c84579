"""Run configuration documents read by the CLI commands (JSON, unknown keys rejected)."""
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.errors import UsageError
from app.network.model import ModelArchitecture
from app.network.training import TrainConfig
from app.services.classical import SbSolverConfig
from app.services.noise import GainGeometry

Method = Literal["two-point", "nn", "fa", "tv", "cnn"]
SCENE_METHODS = ("nn", "fa", "tv")

NOISE_GRIDS: Dict[str, List[Tuple[float, float]]] = {
    "sequence": [(g, o) for g in (0.08, 0.10, 0.12) for o in (5.0, 10.0, 15.0)],
    "set12": [(g, o) for g in (0.04, 0.08, 0.12) for o in (5.0, 10.0, 15.0)],
}


def _existing(path: Optional[Path], what: str) -> Optional[Path]:
    if path is not None and not path.exists():
        raise ValueError(f"{what} '{path}' does not exist")
    return path


def _writable_file(path: Optional[Path]) -> Optional[Path]:
    if path is not None and path.is_dir():
        raise ValueError(f"Output '{path}' is a directory, expected a file path")
    return path


class RunConfig(BaseModel):
    """Base of every command document."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    @classmethod
    def from_file(cls, path: Union[str, Path]):
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"Config file '{path}' not found")
        try:
            document = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"Config file '{path}' is not valid JSON: {e}") from e
        return cls.model_validate(document)


class ImageSource(BaseModel):
    """Clean images: a directory of .pgm/.f32 files, or the bundled synthetic textures."""

    model_config = ConfigDict(extra="forbid")

    directory: Optional[Path] = None
    bundled_count: int = Field(8, ge=1)
    bundled_size: int = Field(96, ge=8)
    bundled_seed: int = 0

    @field_validator("directory")
    @classmethod
    def _check_directory(cls, value):
        if value is not None and not value.is_dir():
            raise ValueError(f"Image directory '{value}' does not exist")
        return value


class CorrectConfig(RunConfig):
    """Options of `correct` that are not flags."""

    solver: Dict[str, Any] = Field(default_factory=dict)
    precision: Optional[Literal["float64", "float32"]] = None
    bit_depth: Literal[8, 16] = 8

    def solver_for(self, method: str) -> SbSolverConfig:
        return SbSolverConfig.for_method(method, **self.solver)


class DatasetConfig(RunConfig):
    source: ImageSource = Field(default_factory=ImageSource)
    count: int = Field(1000, ge=0)
    augment: bool = True
    sigma_g_range: Tuple[float, float] = (0.05, 0.15)
    sigma_o_range: Tuple[float, float] = (5.0, 25.0)
    gain_geometry: GainGeometry = "stripe_column"
    patch_size: int = Field(40, ge=2)
    seed: int = 0
    output: Optional[Path] = None


class TrainRequest(RunConfig):
    """Dataset, architecture and optimizer settings of a training run."""

    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    # Pre-exported dataset directory; overrides `dataset` generation
    dataset_dir: Optional[Path] = None
    holdout: int = Field(0, ge=0)
    architecture: ModelArchitecture = Field(default_factory=ModelArchitecture)
    train: TrainConfig = Field(default_factory=TrainConfig)
    precision: Optional[Literal["float64", "float32"]] = None
    output: Path
    loss_history: Optional[Path] = None

    @field_validator("dataset_dir")
    @classmethod
    def _check_dataset_dir(cls, value):
        return _existing(value, "Dataset directory")

    @field_validator("output", "loss_history")
    @classmethod
    def _check_outputs(cls, value):
        return _writable_file(value)

    @property
    def loss_history_path(self) -> Path:
        return self.loss_history or self.output.with_name(self.output.name + ".loss.csv")

    @property
    def validation_psnr_path(self) -> Path:
        return self.loss_history_path.with_name(self.output.name + ".validation_psnr.csv")


class SceneSource(BaseModel):
    """Clean frame sequence: a moving window over a synthetic scene, or files in a directory."""

    model_config = ConfigDict(extra="forbid")

    directory: Optional[Path] = None
    frames: int = Field(100, ge=1)
    height: int = Field(64, ge=8)
    width: int = Field(64, ge=8)
    margin: int = Field(24, ge=0)
    motion: Literal["random_walk", "linear"] = "random_walk"
    velocity: Tuple[int, int] = (1, 1)
    max_step: int = Field(2, ge=1)
    # (start frame, length) of a frozen-window stretch
    stall: Optional[Tuple[int, int]] = None
    seed: int = 0

    @field_validator("directory")
    @classmethod
    def _check_directory(cls, value):
        if value is not None and not value.is_dir():
            raise ValueError(f"Sequence directory '{value}' does not exist")
        return value


class BenchConfig(RunConfig):
    grid: Union[Literal["sequence", "set12"], List[Tuple[float, float]]] = "sequence"
    methods: List[Method] = Field(default_factory=lambda: ["nn", "fa", "tv"])
    solvers: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    model: Optional[Path] = None
    scene: SceneSource = Field(default_factory=SceneSource)
    gain_geometry: GainGeometry = "stripe_column"
    noise_seed: int = 0
    # Radiance levels of the simulated flat references for two-point calibration
    reference_levels: Tuple[float, float] = (30.0, 200.0)
    ground_truth: bool = True
    export_curves: Optional[Path] = None
    parallel: bool = True
    output: Path

    @field_validator("model")
    @classmethod
    def _check_model(cls, value):
        return _existing(value, "Model checkpoint")

    @field_validator("output")
    @classmethod
    def _check_output(cls, value):
        return _writable_file(value)

    @model_validator(mode="after")
    def _check_methods(self) -> "BenchConfig":
        if len(set(self.methods)) != len(self.methods):
            raise ValueError(f"Duplicate methods in {self.methods}")
        if "cnn" in self.methods and self.model is None:
            raise ValueError("Method 'cnn' needs a 'model' checkpoint")
        unknown = [m for m in self.solvers if m not in SCENE_METHODS]
        if unknown:
            raise ValueError(f"Solver settings given for non scene-based methods {unknown}")
        for method in SCENE_METHODS:
            if method in self.methods:
                self.solver_for(method)
        return self

    @property
    def noise_grid(self) -> List[Tuple[float, float]]:
        if isinstance(self.grid, str):
            return list(NOISE_GRIDS[self.grid])
        return [(float(g), float(o)) for g, o in self.grid]

    def solver_for(self, method: str) -> SbSolverConfig:
        solver = SbSolverConfig.for_method(method, **self.solvers.get(method, {}))
        solver.check_for(method)
        return solver
