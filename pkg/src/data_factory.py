"""
Data factory module for orojar-lab
Procedural sprite renderer with exact ground-truth factors and the DFAC1 dataset file
"""
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Union

import numpy as np

from .imaging import save_contact_sheet
from .utils import atomic_write_bytes

logger = logging.getLogger(__name__)

SHAPES = ("square", "ellipse", "triangle")
FACTOR_NAMES = ("shape_id", "size", "rotation", "pos_x", "pos_y")
SIZE_RANGE = (0.3, 0.9)
ROTATION_RANGE = (0.0, 2.0 * math.pi)
POS_RANGE = (0.15, 0.85)

# circumradius at the largest size; equals the position margin so every sprite fits
MAX_RADIUS = POS_RANGE[0]
SUPERSAMPLE = 4

# rotational symmetry order per shape id
SYMMETRY_ORDER = {0: 4, 1: 2, 2: 3}

DATASET_MAGIC = b"DFAC1"
_HEADER = struct.Struct("<5sII")
_FACTORS = struct.Struct("<5d")


class FactorRangeError(ValueError):
    """Exception for factor values outside their documented range"""
    pass


class DatasetFormatError(ValueError):
    """Exception for unreadable dataset files"""
    pass


@dataclass(frozen=True)
class FactorSpec:
    """Ground-truth factors of one sprite"""
    shape_id: int
    size: float
    rotation: float
    pos_x: float
    pos_y: float

    def validate(self) -> None:
        if self.shape_id not in SYMMETRY_ORDER:
            raise FactorRangeError(f"shape_id must be one of {sorted(SYMMETRY_ORDER)}, got {self.shape_id}")
        checks = (
            ("size", self.size, SIZE_RANGE, True),
            ("rotation", self.rotation, ROTATION_RANGE, False),
            ("pos_x", self.pos_x, POS_RANGE, True),
            ("pos_y", self.pos_y, POS_RANGE, True),
        )
        for name, value, (lo, hi), closed in checks:
            inside = lo <= value <= hi if closed else lo <= value < hi
            if not inside:
                bracket = "]" if closed else ")"
                raise FactorRangeError(f"{name}={value} outside [{lo}, {hi}{bracket}")

    def as_array(self) -> np.ndarray:
        return np.array([self.shape_id, self.size, self.rotation, self.pos_x, self.pos_y], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "FactorSpec":
        return cls(int(round(values[0])), float(values[1]), float(values[2]), float(values[3]), float(values[4]))


@dataclass
class FactorSample:
    image: np.ndarray  # (H, W) float32 in [0, 1]
    factors: FactorSpec


# Membership tests in the sprite frame, unit circumradius
def _inside_square(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    half_side = 1.0 / math.sqrt(2.0)
    return (np.abs(u) <= half_side) & (np.abs(v) <= half_side)


def _inside_ellipse(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u * u + 4.0 * v * v <= 1.0


def _inside_triangle(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    inside = np.ones(u.shape, dtype=bool)
    for angle in (math.radians(270.0), math.radians(30.0), math.radians(150.0)):
        inside &= u * math.cos(angle) + v * math.sin(angle) <= 0.5
    return inside


_INSIDE: Dict[int, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    0: _inside_square,
    1: _inside_ellipse,
    2: _inside_triangle,
}


def sprite_radius(size: float) -> float:
    """Circumradius in normalized canvas units"""
    return MAX_RADIUS * size / SIZE_RANGE[1]


def render(spec: FactorSpec, resolution: int = 32) -> np.ndarray:
    """Rasterize one sprite with 4x supersampled coverage.

    pos_x is the column coordinate and pos_y the row coordinate, both normalized to [0, 1].
    The shape's centroid sits at (pos_x, pos_y).
    """
    spec.validate()
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")

    fine = resolution * SUPERSAMPLE
    coords = (np.arange(fine, dtype=np.float64) + 0.5) / fine
    xs, ys = np.meshgrid(coords, coords)

    theta = math.fmod(spec.rotation, 2.0 * math.pi / SYMMETRY_ORDER[spec.shape_id])
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    dx, dy = xs - spec.pos_x, ys - spec.pos_y
    radius = sprite_radius(spec.size)
    u = (cos_t * dx + sin_t * dy) / radius
    v = (-sin_t * dx + cos_t * dy) / radius

    inside = _INSIDE[spec.shape_id](u, v).astype(np.float32)
    return inside.reshape(resolution, SUPERSAMPLE, resolution, SUPERSAMPLE).mean(axis=(1, 3))


def _factors_for_index(rng_seed: int, index: int) -> FactorSpec:
    rng = np.random.default_rng([rng_seed, index])
    return FactorSpec(
        shape_id=int(rng.integers(0, len(SHAPES))),
        size=float(rng.uniform(*SIZE_RANGE)),
        rotation=float(rng.uniform(*ROTATION_RANGE)),
        pos_x=float(rng.uniform(*POS_RANGE)),
        pos_y=float(rng.uniform(*POS_RANGE)),
    )


def sample_factors(rng_seed: int, count: int) -> List[FactorSpec]:
    """Independent uniform factors; sample i depends only on (rng_seed, i)"""
    return [_factors_for_index(rng_seed, index) for index in range(count)]


def sample_batch(rng_seed: int, batch: int, resolution: int = 32, workers: int = 1) -> List[FactorSample]:
    """Render `batch` samples; worker count never changes the result"""
    if batch <= 0:
        raise ValueError(f"batch must be positive, got {batch}")
    specs = sample_factors(rng_seed, batch)

    def build(spec: FactorSpec) -> FactorSample:
        return FactorSample(render(spec, resolution), spec)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build, specs))
    return [build(spec) for spec in specs]


@dataclass
class FactorDataset:
    """In-memory dataset: images (N, H, W) float32, factors (N, 5) float64"""
    images: np.ndarray
    factors: np.ndarray

    def __len__(self) -> int:
        return len(self.images)

    @property
    def resolution(self) -> int:
        return int(self.images.shape[1])

    @classmethod
    def from_samples(cls, samples: Sequence[FactorSample]) -> "FactorDataset":
        images = np.stack([sample.image for sample in samples]).astype(np.float32)
        factors = np.stack([sample.factors.as_array() for sample in samples])
        return cls(images, factors)

    def batch(self, indices: np.ndarray) -> np.ndarray:
        """Images for the given indices as an (B, 1, H, W) array"""
        return self.images[indices][:, None]

    def spec(self, index: int) -> FactorSpec:
        return FactorSpec.from_array(self.factors[index])


def make_dataset(rng_seed: int, count: int, resolution: int = 32, workers: int = 1) -> FactorDataset:
    logger.info(f"Rendering {count} samples at {resolution}x{resolution} (seed {rng_seed})")
    return FactorDataset.from_samples(sample_batch(rng_seed, count, resolution, workers))


def write_dataset(path: Union[str, Path], dataset: FactorDataset) -> Path:
    """DFAC1 layout: header (magic, u32 resolution, u32 count), then per sample five
    little-endian float64 factors followed by the row-major 8-bit image"""
    quantized = np.round(np.clip(dataset.images, 0.0, 1.0) * 255.0).astype(np.uint8)
    parts = [_HEADER.pack(DATASET_MAGIC, dataset.resolution, len(dataset))]
    for factors, image in zip(dataset.factors, quantized):
        parts.append(_FACTORS.pack(*factors))
        parts.append(image.tobytes())
    return atomic_write_bytes(path, b"".join(parts))


def read_dataset(path: Union[str, Path]) -> FactorDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetFormatError(f"{path}: file shorter than the DFAC1 header")
    magic, resolution, count = _HEADER.unpack_from(data, 0)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    pixels = resolution * resolution
    record = _FACTORS.size + pixels
    if len(data) != _HEADER.size + count * record:
        raise DatasetFormatError(f"{path}: expected {count} records of {record} bytes, file has {len(data)} bytes")

    body = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size).reshape(count, record)
    factors = body[:, :_FACTORS.size].copy().view("<f8").astype(np.float64)
    images = body[:, _FACTORS.size:].reshape(count, resolution, resolution).astype(np.float32) / 255.0
    logger.info(f"Read {count} samples at {resolution}x{resolution} from {path}")
    return FactorDataset(images, factors)


def write_contact_sheet(path: Union[str, Path], dataset: FactorDataset, count: int = 64) -> Path:
    return save_contact_sheet(path, dataset.images[:count])
