"""Paired (clean, corrupted) training patches and their on-disk export."""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.errors import ConfigurationError, DatasetError
from app.services.image_io import read_raw_f32, write_raw_f32
from app.services.noise import GainGeometry, NoiseSpec, apply_fpn, make_noise
from app.tensor import rng_for

logger = logging.getLogger(__name__)

PATCH_SIZE = 40
_PATCH_STREAM = 2
MANIFEST_NAME = "dataset.json"


class Augmentation(BaseModel):
    """Horizontal flip then counter-clockwise rotation by `rotation` degrees."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    flip: bool = False
    rotation: int = Field(0, ge=0, lt=360, multiple_of=90)

    def apply(self, patch: np.ndarray) -> np.ndarray:
        out = patch[:, ::-1] if self.flip else patch
        return np.ascontiguousarray(np.rot90(out, k=self.rotation // 90))


AUGMENTATIONS: Tuple[Augmentation, ...] = tuple(
    Augmentation(flip=flip, rotation=rotation) for flip in (False, True) for rotation in (0, 90, 180, 270)
)


@dataclass
class PatchDataset:
    clean: np.ndarray
    corrupted: np.ndarray
    specs: List[NoiseSpec] = field(default_factory=list)
    augmentations: List[Augmentation] = field(default_factory=list)
    origins: List[Tuple[int, int, int]] = field(default_factory=list)
    # generation seed; None when unknown
    seed: Optional[int] = None

    def __post_init__(self):
        if self.clean.shape != self.corrupted.shape:
            raise ConfigurationError(
                f"Clean patches {self.clean.shape} and corrupted patches {self.corrupted.shape} differ"
            )

    def __len__(self) -> int:
        return int(self.clean.shape[0])

    @property
    def patch_size(self) -> int:
        return int(self.clean.shape[-1])

    def subset(self, indices: Sequence[int]) -> "PatchDataset":
        indices = list(indices)
        return PatchDataset(
            clean=self.clean[indices],
            corrupted=self.corrupted[indices],
            specs=[self.specs[i] for i in indices] if self.specs else [],
            augmentations=[self.augmentations[i] for i in indices] if self.augmentations else [],
            origins=[self.origins[i] for i in indices] if self.origins else [],
            seed=self.seed,
        )

    def split(self, holdout: int) -> Tuple["PatchDataset", "PatchDataset"]:
        """(train, validation) with the last `holdout` pairs held out."""
        if not 0 <= holdout <= len(self):
            raise ConfigurationError(f"Holdout {holdout} outside 0..{len(self)}")
        cut = len(self) - holdout
        return self.subset(range(cut)), self.subset(range(cut, len(self)))


def _empty(patch_size: int, seed: Optional[int] = None) -> PatchDataset:
    blank = np.zeros((0, patch_size, patch_size))
    return PatchDataset(clean=blank, corrupted=blank.copy(), seed=seed)


def gen_patch_dataset(
    source_images: Sequence[np.ndarray],
    count: int,
    augment: bool = True,
    sigma_g_range: Tuple[float, float] = (0.05, 0.15),
    sigma_o_range: Tuple[float, float] = (5.0, 25.0),
    seed: int = 0,
    patch_size: int = PATCH_SIZE,
    gain_geometry: GainGeometry = "stripe_column",
) -> PatchDataset:
    """Random crops of the sources, each corrupted by its own FPN draw.

    Every patch i draws from its own stream derived from (seed, i), so the
    dataset is reproducible patch by patch.
    """
    if count < 0:
        raise ConfigurationError(f"Patch count must be non-negative, got {count}")
    for name, (low, high) in (("sigma_g_range", sigma_g_range), ("sigma_o_range", sigma_o_range)):
        if low < 0 or high < low:
            raise ConfigurationError(f"{name} must satisfy 0 <= low <= high, got {(low, high)}")
    if count == 0:
        return _empty(patch_size, seed)

    usable = []
    for index, image in enumerate(source_images):
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2 or image.shape[0] < patch_size or image.shape[1] < patch_size:
            logger.warning(f"[SIM] Skipping source image {index} with shape {image.shape}: "
                           f"smaller than {patch_size}x{patch_size}")
            continue
        usable.append((index, image))
    if not usable:
        raise DatasetError(f"No source image is at least {patch_size}x{patch_size}")

    clean = np.empty((count, patch_size, patch_size))
    corrupted = np.empty_like(clean)
    specs, augmentations, origins = [], [], []
    for i in range(count):
        rng = rng_for(seed, _PATCH_STREAM, i)
        source_index, image = usable[int(rng.integers(len(usable)))]
        top = int(rng.integers(image.shape[0] - patch_size + 1))
        left = int(rng.integers(image.shape[1] - patch_size + 1))
        aug = AUGMENTATIONS[int(rng.integers(len(AUGMENTATIONS)))] if augment else AUGMENTATIONS[0]
        patch = aug.apply(image[top:top + patch_size, left:left + patch_size])
        spec = NoiseSpec(
            sigma_g=float(rng.uniform(*sigma_g_range)),
            sigma_o=float(rng.uniform(*sigma_o_range)),
            gain_geometry=gain_geometry,
            seed=int(rng.integers(2 ** 63)),
        )
        clean[i] = patch
        corrupted[i] = apply_fpn(patch, make_noise(spec, patch_size, patch_size))
        specs.append(spec)
        augmentations.append(aug)
        origins.append((source_index, top, left))

    logger.info(f"[SIM] Generated {count} patches of {patch_size}x{patch_size} "
                f"from {len(usable)} source image(s)")
    return PatchDataset(clean=clean, corrupted=corrupted, specs=specs,
                        augmentations=augmentations, origins=origins, seed=seed)


def save_patch_dataset(dataset: PatchDataset, directory: Union[str, Path]) -> Path:
    """Write each pair as raw-f32 files plus a JSON manifest of specs and augmentations."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(len(dataset)):
        clean_name, corrupted_name = f"patch_{i:06d}_clean.f32", f"patch_{i:06d}_corrupted.f32"
        write_raw_f32(directory / clean_name, dataset.clean[i])
        write_raw_f32(directory / corrupted_name, dataset.corrupted[i])
        entry = {"clean": clean_name, "corrupted": corrupted_name}
        if dataset.specs:
            entry["noise"] = dataset.specs[i].model_dump()
        if dataset.augmentations:
            entry["augmentation"] = dataset.augmentations[i].model_dump()
        if dataset.origins:
            entry["origin"] = list(dataset.origins[i])
        entries.append(entry)
    manifest = {"patch_size": dataset.patch_size, "count": len(dataset), "seed": dataset.seed, "pairs": entries}
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2))
    logger.info(f"[IO] Exported {len(dataset)} patch pairs to {directory}")
    return path


def load_patch_dataset(directory: Union[str, Path]) -> PatchDataset:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError as e:
        raise DatasetError(f"No dataset manifest at {manifest_path}") from e
    pairs = manifest.get("pairs", [])
    seed = manifest.get("seed")
    size = int(manifest.get("patch_size", PATCH_SIZE))
    if not pairs:
        return _empty(size, seed)
    clean = np.stack([read_raw_f32(directory / p["clean"]) for p in pairs])
    corrupted = np.stack([read_raw_f32(directory / p["corrupted"]) for p in pairs])
    specs = [NoiseSpec(**p["noise"]) for p in pairs] if all("noise" in p for p in pairs) else []
    augs = [Augmentation(**p["augmentation"]) for p in pairs] if all("augmentation" in p for p in pairs) else []
    origins = [tuple(p["origin"]) for p in pairs] if all("origin" in p for p in pairs) else []
    logger.info(f"[IO] Loaded {len(pairs)} patch pairs from {directory}")
    return PatchDataset(clean=clean, corrupted=corrupted, specs=specs, augmentations=augs,
                        origins=origins, seed=seed)
