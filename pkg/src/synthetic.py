"""
Synthetic generators for orojar-lab
Frozen generators with known structure, used to check penalties, SeFa, discovery and metrics
"""
import logging
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .models import GeneratorOutput, as_latent_batch
from .nn import BatchStats, Linear, Module, Parameter
from .tensor import Tensor, default_dtype

logger = logging.getLogger(__name__)


class LinearGenerator(Module):
    """G(z) = W z (+ b) with a single tap; optionally reshaped into an image"""

    def __init__(
        self,
        weight: np.ndarray,
        bias: Optional[np.ndarray] = None,
        image_shape: Optional[Tuple[int, ...]] = None,
    ):
        super().__init__()
        weight = np.asarray(weight, dtype=default_dtype())
        self.weight = Parameter(weight)
        self.bias = Parameter(bias if bias is not None else np.zeros(weight.shape[0], dtype=default_dtype()))
        self.latent_dim = weight.shape[1]
        self.tap_count = 1
        self.image_shape = image_shape

    def first_layer_weight(self) -> np.ndarray:
        return self.weight.data

    def forward_with_taps(self, z, stats: Optional[Dict[str, BatchStats]] = None) -> GeneratorOutput:
        z = as_latent_batch(self, z)
        out = z @ self.weight.T + self.bias
        image = out.reshape((z.shape[0],) + self.image_shape) if self.image_shape else out
        return GeneratorOutput([out], image, {})


class MLPGenerator(Module):
    """Smooth two-layer map tanh(W2 tanh(W1 z + b1) + b2) with both layer outputs tapped"""

    def __init__(self, latent_dim: int, hidden: int, out_features: int, rng: np.random.Generator, std: float = 1.0):
        super().__init__()
        self.latent_dim = latent_dim
        self.tap_count = 2
        self.fc1 = Linear(latent_dim, hidden, rng, init_std=std / np.sqrt(latent_dim))
        self.fc2 = Linear(hidden, out_features, rng, init_std=std / np.sqrt(hidden))
        self.fc1.bias.data[...] = rng.normal(0.0, 0.5, size=hidden)
        self.fc2.bias.data[...] = rng.normal(0.0, 0.5, size=out_features)

    def first_layer_weight(self) -> np.ndarray:
        return self.fc1.weight.data

    def forward_with_taps(self, z, stats: Optional[Dict[str, BatchStats]] = None) -> GeneratorOutput:
        z = as_latent_batch(self, z)
        h = self.fc1(z).tanh()
        out = self.fc2(h).tanh()
        return GeneratorOutput([h, out], out, {})


def _block_masks(latent_dim: int, size: int) -> np.ndarray:
    """(m, size) 0/1 rows with disjoint contiguous supports"""
    width = size // latent_dim
    if width == 0:
        raise ValueError(f"Cannot split {size} outputs into {latent_dim} blocks")
    masks = np.zeros((latent_dim, size), dtype=default_dtype())
    for i in range(latent_dim):
        masks[i, i * width:(i + 1) * width] = 1.0
    return masks


class RotatedFactorGenerator(Module):
    """G(z) = f(Q z) where f acts on each rotated coordinate separately.

    Coordinate i of y = Q z drives its own output block through s_i * tanh(y_i), so the
    Jacobian of f is diagonal and the planted directions are the rows of Q.
    """

    def __init__(self, rotation: np.ndarray, scales: Sequence[float], block: int = 8):
        super().__init__()
        rotation = np.asarray(rotation, dtype=np.float64)
        m = rotation.shape[0]
        if rotation.shape != (m, m) or not np.allclose(rotation @ rotation.T, np.eye(m), atol=1e-8):
            raise ValueError("rotation must be a square orthogonal matrix")
        if len(scales) != m:
            raise ValueError(f"Expected {m} scales, got {len(scales)}")
        self.latent_dim = m
        self.tap_count = 1
        self.rotation = rotation.astype(default_dtype())
        self.scales = np.asarray(scales, dtype=default_dtype())
        self.masks = _block_masks(m, m * block)

    @property
    def planted_directions(self) -> np.ndarray:
        """Columns are the latent directions that move exactly one factor (Qᵀ)"""
        return self.rotation.T

    def factors(self, z: np.ndarray) -> np.ndarray:
        """Ground-truth factor values y = Q z for a (B, m) batch"""
        return np.atleast_2d(z) @ self.rotation.T

    def forward_with_taps(self, z, stats: Optional[Dict[str, BatchStats]] = None) -> GeneratorOutput:
        z = as_latent_batch(self, z)
        y = z @ Tensor(self.rotation.T, dtype=z.dtype)
        out = (y.tanh() * Tensor(self.scales, dtype=z.dtype)) @ Tensor(self.masks, dtype=z.dtype)
        return GeneratorOutput([out], out, {})


def random_rotation(m: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix"""
    q, r = np.linalg.qr(rng.standard_normal((m, m)))
    return q * np.sign(np.diag(r))


class BlockCopyGenerator(Module):
    """Copies z_i into its own band of a (1, R, R) image; no other dependence on z"""

    def __init__(self, latent_dim: int, resolution: int = 16):
        super().__init__()
        self.latent_dim = latent_dim
        self.tap_count = 1
        self.resolution = resolution
        self.masks = _block_masks(latent_dim, resolution * resolution)

    def forward_with_taps(self, z, stats: Optional[Dict[str, BatchStats]] = None) -> GeneratorOutput:
        z = as_latent_batch(self, z)
        out = z @ Tensor(self.masks, dtype=z.dtype)
        image = out.reshape((z.shape[0], 1, self.resolution, self.resolution))
        return GeneratorOutput([out], image, {})


class ConstantGenerator(Module):
    """Ignores z entirely"""

    def __init__(self, latent_dim: int, resolution: int = 16, value: float = 0.5):
        super().__init__()
        self.latent_dim = latent_dim
        self.tap_count = 1
        self.resolution = resolution
        self.value = value

    def forward_with_taps(self, z, stats: Optional[Dict[str, BatchStats]] = None) -> GeneratorOutput:
        z = as_latent_batch(self, z)
        image = Tensor(np.full((z.shape[0], 1, self.resolution, self.resolution), self.value), dtype=z.dtype)
        return GeneratorOutput([image.flatten(1)], image, {})
