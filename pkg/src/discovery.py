"""
Discovery module for orojar-lab
Learns an orthonormal latent direction matrix on a frozen generator by minimizing the
orthogonal Jacobian penalty taken with respect to direction coordinates
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from tqdm import tqdm

from .config import ConfigurationError, PenaltyConfig
from .models import TappedGenerator, as_latent_batch
from .nn import Module, Parameter, evaluating, frozen
from .optim import Adam
from .regularizers import directional_second_differences, directional_sq_norms, rademacher, sample_variance
from .tensor import Tensor, concat, default_dtype, no_grad

logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-10
DISCOVERY_KINDS = ("orojar", "hessian")


class DegenerateDirectionError(ValueError):
    """Exception for direction columns that vanish after projection"""
    pass


@dataclass
class DirectionMatrix:
    """m×N matrix with orthonormal columns"""
    A: np.ndarray
    eta: float = 1.0
    penalty_history: List[float] = field(default_factory=list)

    @property
    def n_directions(self) -> int:
        return self.A.shape[1]

    def column(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n_directions:
            raise IndexError(f"Direction index {i} out of range for {self.n_directions} directions")
        return self.A[:, i]

    def orthonormality_error(self) -> float:
        """max |AᵀA − I|"""
        return float(np.abs(self.A.T @ self.A - np.eye(self.n_directions)).max())


def gram_schmidt(A: Tensor) -> Tensor:
    """Differentiable classical Gram–Schmidt over the columns of A (m×N)"""
    m, n = A.shape
    if n > m:
        raise ValueError(f"Cannot orthonormalize {n} directions in {m} dimensions")
    basis: List[Tensor] = []
    for k in range(n):
        column = A[:, k:k + 1]
        residual = column
        for q in basis:
            residual = residual - q * (q * column).sum()
        norm = (residual * residual).sum() ** 0.5
        if norm.item() < DEGENERATE_NORM:
            raise DegenerateDirectionError(f"Direction column {k} is linearly dependent on earlier columns")
        basis.append(residual / norm)
    return concat(basis, axis=1)


def orthonormalize(A_raw, eta: float = 1.0) -> DirectionMatrix:
    """Classical Gram–Schmidt with re-normalization; preserves the column span"""
    raw = np.asarray(A_raw.data if isinstance(A_raw, Tensor) else A_raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError(f"Expected an m×N matrix, got shape {raw.shape}")
    with no_grad():
        A = gram_schmidt(Tensor(raw, dtype=np.float64))
    return DirectionMatrix(A.data, eta=eta)


def discover(
    g_frozen: TappedGenerator,
    config: PenaltyConfig,
    iters: int,
    rng: np.random.Generator,
    n_directions: Optional[int] = None,
    eta: float = 1.0,
    lr: float = 1e-3,
    batch_size: int = 16,
    initial: Optional[np.ndarray] = None,
    step_callback: Optional[Callable[[int, DirectionMatrix], None]] = None,
    progress: bool = False,
) -> DirectionMatrix:
    """Minimize the stochastic penalty of h(ω) = G(z + ηAω) over A, keeping G frozen.

    Each step samples a latent batch and a column index i, takes the base point
    z' = z + η A ω_i, and differentiates along Rademacher vectors in ω-space:
    u_v = (G(z' + εηAv) − G(z')) / ε. Gradients reach only the raw direction matrix,
    which is re-orthonormalized after every optimizer step. With penalty kind "hessian" the
    objective is the Hessian Penalty of h taken from second differences along the same vectors.
    """
    if config.kind not in DISCOVERY_KINDS:
        raise ConfigurationError(f"discovery needs penalty.kind in {list(DISCOVERY_KINDS)}, got {config.kind!r}")
    m = g_frozen.latent_dim
    n = n_directions or m
    if not 1 <= n <= m:
        raise ValueError(f"n_directions must be in 1..{m}, got {n}")

    start = initial if initial is not None else rng.standard_normal((m, n))
    directions = orthonormalize(start, eta)
    if n < 2:
        logger.warning("Single direction: no off-diagonal pairs, skipping optimization")
        return directions

    A_raw = Parameter(directions.A, dtype=default_dtype())
    optimizer = Adam([("directions", A_raw)], lr=lr, betas=(0.9, 0.999))
    history = directions.penalty_history

    def run() -> None:
        for step in tqdm(range(iters), desc="discover", disable=not progress):
            A = gram_schmidt(A_raw)
            z = Tensor(rng.standard_normal((batch_size, m)))
            column = int(rng.integers(n))
            base_z = z + A[:, column:column + 1].T * eta
            base = g_frozen.forward_with_taps(base_z)
            probes = rademacher(rng, (config.k_samples, batch_size, n))
            shifts = [Tensor(p) @ A.T * eta for p in probes]
            if config.kind == "hessian":
                seconds = directional_second_differences(g_frozen, base_z, shifts, config.epsilon, config.layers, base)
                terms = [sample_variance(layer).max(axis=1).mean() for layer in seconds]
            else:
                norms = directional_sq_norms(g_frozen, base_z, shifts, config.epsilon, config.layers, base)
                terms = [sample_variance(layer_norms).mean() for layer_norms in norms]
            penalty = sum(terms[1:], terms[0])

            optimizer.zero_grad()
            penalty.backward()
            optimizer.step()
            A_raw.data[...] = orthonormalize(A_raw.data).A
            history.append(penalty.item())

            if step_callback is not None:
                step_callback(step, DirectionMatrix(A_raw.data.copy(), eta))
            if (step + 1) % max(1, iters // 10) == 0:
                logger.info(f"discover step {step + 1}/{iters}: penalty {history[-1]:.6g}")

    if isinstance(g_frozen, Module):
        with frozen(g_frozen), evaluating(g_frozen):
            run()
    else:
        run()

    directions.A = np.asarray(A_raw.data, dtype=np.float64).copy()
    return directions


def edit(g: TappedGenerator, z, directions: DirectionMatrix, column: int, eta: Optional[float] = None) -> np.ndarray:
    """Image batch G(z + η·A[:, column])"""
    step = directions.eta if eta is None else eta
    offset = directions.column(column) * step
    z = as_latent_batch(g, z)
    latents = z.data + offset.astype(z.dtype)[None, :]
    with no_grad():
        if isinstance(g, Module):
            with evaluating(g):
                return g.forward_with_taps(Tensor(latents, dtype=z.dtype)).image.data
        return g.forward_with_taps(Tensor(latents, dtype=z.dtype)).image.data
