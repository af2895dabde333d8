"""
SeFa module for orojar-lab
Closed-form latent directions from the SVD of the first-layer weight
"""
import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .models import TappedGenerator, as_latent_batch
from .nn import Module, evaluating
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

NEAR_ZERO_SINGULAR_VALUE = 1e-8


@dataclass
class SvdFactorization:
    """W = U diag(singular_values) Vᵀ; columns of V are the latent directions"""
    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    @property
    def directions(self) -> np.ndarray:
        return self.V

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.V.T

    def top(self, k: Optional[int]) -> np.ndarray:
        """Leading k directions as columns (all when k is None)"""
        return self.V if k is None else self.V[:, :k]


@dataclass
class PropositionReport:
    """Checks that the rotated first layer is equivalent and has an orthogonal Jacobian"""
    equivalence_error: float
    max_offdiag: float
    lambda_sq_max: float

    @property
    def relative_offdiag(self) -> float:
        return self.max_offdiag / self.lambda_sq_max if self.lambda_sq_max > 0 else 0.0

    def to_dict(self) -> Dict[str, float]:
        result = asdict(self)
        result["relative_offdiag"] = self.relative_offdiag
        return result


def _first_layer_weight(g: TappedGenerator) -> np.ndarray:
    if not hasattr(g, "first_layer_weight"):
        raise TypeError(f"{type(g).__name__} has no fully-connected first layer")
    return np.asarray(g.first_layer_weight(), dtype=np.float64)


def factorize(weight: np.ndarray) -> SvdFactorization:
    """Thin float64 SVD with singular values non-increasing and each V column's largest-magnitude entry positive"""
    U, singular_values, Vt = np.linalg.svd(np.asarray(weight, dtype=np.float64), full_matrices=False)
    V = Vt.T
    pivots = np.abs(V).argmax(axis=0)
    signs = np.sign(V[pivots, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    U, V = U * signs, V * signs

    if (tiny := singular_values[singular_values < NEAR_ZERO_SINGULAR_VALUE]).size:
        logger.warning(f"First-layer weight is rank deficient; near-zero singular values: {tiny.tolist()}")
    return SvdFactorization(U, singular_values, V)


def sefa_directions(g: TappedGenerator) -> SvdFactorization:
    """Factorize the bare first-layer weight (bias and normalization excluded)"""
    factorization = factorize(_first_layer_weight(g))
    logger.info(f"SeFa singular values: {np.round(factorization.singular_values, 6).tolist()}")
    return factorization


def verify_proposition(
    g: TappedGenerator,
    z,
    factorization: Optional[SvdFactorization] = None,
) -> PropositionReport:
    """Check W z == (UΛ)(Vᵀz) elementwise and that (UΛ)ᵀ(UΛ) is diagonal"""
    weight = _first_layer_weight(g)
    factorization = factorization or factorize(weight)
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=weight.dtype)
    z = np.atleast_2d(z)

    rotated_weight = factorization.U * factorization.singular_values
    rotated_z = z @ factorization.V
    equivalence = np.abs(z @ weight.T - rotated_z @ rotated_weight.T)

    gram = rotated_weight.T @ rotated_weight
    off_diagonal = np.abs(gram - np.diag(np.diag(gram)))
    return PropositionReport(
        equivalence_error=float(equivalence.max()) if equivalence.size else 0.0,
        max_offdiag=float(off_diagonal.max()) if off_diagonal.size else 0.0,
        lambda_sq_max=float(factorization.singular_values.max() ** 2) if factorization.singular_values.size else 0.0,
    )


def _render(g: TappedGenerator, latents: np.ndarray) -> np.ndarray:
    with no_grad():
        if isinstance(g, Module):
            with evaluating(g):
                return g.forward_with_taps(Tensor(latents)).image.data
        return g.forward_with_taps(Tensor(latents)).image.data


def traverse_direction(
    g: TappedGenerator,
    z,
    direction,
    value_range: Sequence[float] = (-2.0, 2.0),
    steps: int = 9,
) -> np.ndarray:
    """Images G(z + t·direction) for `steps` values of t evenly spaced over the range"""
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    direction = np.asarray(direction, dtype=np.float64).reshape(-1)
    if (norm := np.linalg.norm(direction)) == 0:
        raise ValueError("direction must be non-zero")
    z = as_latent_batch(g, z).data[0]
    lo, hi = value_range
    ts = np.linspace(lo, hi, steps)
    latents = z[None, :] + ts[:, None] * (direction / norm)[None, :]
    return _render(g, latents)


def coordinate_traversal(
    g: TappedGenerator,
    z,
    value_range: Sequence[float] = (-2.0, 2.0),
    steps: int = 9,
) -> np.ndarray:
    """Grid (m, steps, ...) where row i sets z_i to each value while the rest stay fixed"""
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    z = as_latent_batch(g, z).data[0]
    values = np.linspace(value_range[0], value_range[1], steps)
    m = g.latent_dim
    latents = np.repeat(z[None, None, :], m, axis=0).repeat(steps, axis=1)
    for i in range(m):
        latents[i, :, i] = values
    images = _render(g, latents.reshape(m * steps, m))
    return images.reshape((m, steps) + images.shape[1:])
