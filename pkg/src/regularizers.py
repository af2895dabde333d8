"""
Regularizers module for orojar-lab
Orthogonal Jacobian penalty (exact and stochastic), Hessian Penalty baseline and the
mixed-derivative probe
"""
import logging
from typing import List, Optional, Sequence

import numpy as np

from .config import PenaltyConfig
from .models import GeneratorOutput, TappedGenerator, as_latent_batch
from .nn import frozen_statistics
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


def rademacher(rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    """Entries ±1 with equal probability"""
    return (rng.integers(0, 2, size=shape) * 2 - 1).astype(dtype)


def all_rademacher(m: int) -> np.ndarray:
    """Every ±1 vector of length m as a (2^m, m) array"""
    grid = np.array(np.meshgrid(*[[-1.0, 1.0]] * m, indexing="ij"))
    return grid.reshape(m, -1).T


def sample_variance(values: Sequence[Tensor], ddof: int = 1) -> Tensor:
    """Elementwise variance over a list of equally shaped tensors"""
    k = len(values)
    if k - ddof <= 0:
        raise ValueError(f"Need more than {ddof} samples for a variance, got {k}")
    mean = sum(values[1:], values[0]) / k
    squares = [(v - mean) * (v - mean) for v in values]
    return sum(squares[1:], squares[0]) / (k - ddof)


def _layer_indices(g: TappedGenerator, layers: Sequence[int]) -> List[int]:
    bad = [layer for layer in layers if not 1 <= layer <= g.tap_count]
    if bad or not layers:
        raise ValueError(f"Layers {list(layers)} must be a non-empty subset of 1..{g.tap_count}")
    return [layer - 1 for layer in layers]


def _flat(t: Tensor) -> Tensor:
    return t.flatten(1)


def _base_pass(g: TappedGenerator, z: Tensor, base: Optional[GeneratorOutput]) -> GeneratorOutput:
    """Reuse a given base pass, else run one whose batch statistics do not update running buffers"""
    if base is not None:
        return base
    with frozen_statistics():
        return g.forward_with_taps(z)


def jacobian_column(
    g: TappedGenerator,
    z,
    v,
    layer: int,
    epsilon: float,
    base: Optional[GeneratorOutput] = None,
) -> Tensor:
    """(G_d(z + εv) − G_d(z)) / ε, flattened per batch row; layer is 1-based"""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    z = as_latent_batch(g, z)
    index = _layer_indices(g, [layer])[0]
    v = v if isinstance(v, Tensor) else Tensor(v, dtype=z.dtype)
    base = _base_pass(g, z, base)
    shifted = g.forward_with_taps(z + v * epsilon, stats=base.stats)
    return _flat(shifted.taps[index] - base.taps[index]) / epsilon


def directional_sq_norms(
    g: TappedGenerator,
    z: Tensor,
    shifts: Sequence[Tensor],
    epsilon: float,
    layers: Sequence[int],
    base: GeneratorOutput,
) -> List[List[Tensor]]:
    """For each layer, ‖(G_d(z + ε s) − G_d(z)) / ε‖² per batch row, one entry per shift"""
    indices = _layer_indices(g, layers)
    norms: List[List[Tensor]] = [[] for _ in indices]
    for shift in shifts:
        shifted = g.forward_with_taps(z + shift * epsilon, stats=base.stats)
        for slot, index in enumerate(indices):
            u = _flat(shifted.taps[index] - base.taps[index]) / epsilon
            norms[slot].append((u * u).sum(axis=1))
    return norms


def orojar_exact_per_layer(g: TappedGenerator, z, config: PenaltyConfig) -> List[float]:
    """Batch mean of Σ_i Σ_(j≠i) (j_iᵀ j_j)² for each configured layer"""
    z = as_latent_batch(g, z)
    m = g.latent_dim
    indices = _layer_indices(g, config.layers)
    with no_grad(), frozen_statistics():
        base = g.forward_with_taps(z)
        columns: List[List[np.ndarray]] = [[] for _ in indices]
        for i in range(m):
            unit = np.zeros(m, dtype=z.dtype)
            unit[i] = 1.0
            shifted = g.forward_with_taps(z + Tensor(unit, dtype=z.dtype) * config.epsilon, stats=base.stats)
            for slot, index in enumerate(indices):
                diff = (shifted.taps[index].data - base.taps[index].data).reshape(z.shape[0], -1)
                columns[slot].append(diff.astype(np.float64) / config.epsilon)

    values = []
    for layer_columns in columns:
        jacobian = np.stack(layer_columns, axis=2)  # (B, n, m)
        gram = np.einsum("bni,bnj->bij", jacobian, jacobian)
        off_diagonal = gram * (1.0 - np.eye(m))
        values.append(float((off_diagonal ** 2).sum(axis=(1, 2)).mean()))
    return values


def orojar_exact(g: TappedGenerator, z, config: PenaltyConfig) -> float:
    """Exact penalty from m finite-difference Jacobian columns per layer (diagnostics only)"""
    return float(sum(orojar_exact_per_layer(g, z, config)))


def _probe_tensors(probes: Optional[np.ndarray], rng: Optional[np.random.Generator], config: PenaltyConfig,
                   z: Tensor) -> List[Tensor]:
    if probes is None:
        if config.k_samples < 2:
            raise ValueError(f"k_samples must be >= 2, got {config.k_samples}")
        rng = rng if rng is not None else np.random.default_rng()
        probes = rademacher(rng, (config.k_samples, z.shape[0], z.shape[1]))
    probes = np.asarray(probes)
    if probes.ndim not in (2, 3) or probes.shape[-1] != z.shape[1]:
        raise ValueError(f"Probes of shape {probes.shape} do not match latent width {z.shape[1]}")
    if len(probes) < 2:
        raise ValueError(f"Need at least 2 probe vectors, got {len(probes)}")
    return [Tensor(p, dtype=z.dtype) for p in probes]


def orojar_layer_terms(
    g: TappedGenerator,
    z,
    config: PenaltyConfig,
    rng: Optional[np.random.Generator] = None,
    probes: Optional[np.ndarray] = None,
    ddof: int = 1,
    base: Optional[GeneratorOutput] = None,
) -> List[Tensor]:
    """Per-layer stochastic penalty: batch mean of the variance of ‖u_v‖² over probe draws.

    probes: optional fixed draws, (k, m) shared by the batch or (k, B, m) per sample.
    base: optional forward pass at z to reuse (its normalization statistics are shared by
    every perturbed pass).
    """
    z = as_latent_batch(g, z)
    shifts = _probe_tensors(probes, rng, config, z)
    base = _base_pass(g, z, base)
    norms = directional_sq_norms(g, z, shifts, config.epsilon, config.layers, base)
    return [sample_variance(layer_norms, ddof).mean() for layer_norms in norms]


def orojar_stochastic(
    g: TappedGenerator,
    z,
    config: PenaltyConfig,
    rng: Optional[np.random.Generator] = None,
    probes: Optional[np.ndarray] = None,
    ddof: int = 1,
    base: Optional[GeneratorOutput] = None,
) -> Tensor:
    """Graph-connected estimate of the penalty; its expectation is twice orojar_exact"""
    terms = orojar_layer_terms(g, z, config, rng, probes, ddof, base)
    return sum(terms[1:], terms[0])


def directional_second_differences(
    g: TappedGenerator,
    z: Tensor,
    shifts: Sequence[Tensor],
    epsilon: float,
    layers: Sequence[int],
    base: GeneratorOutput,
) -> List[List[Tensor]]:
    """For each layer, (G_d(z + ε s) − 2 G_d(z) + G_d(z − ε s)) / ε² flattened, one entry per shift"""
    indices = _layer_indices(g, layers)
    seconds: List[List[Tensor]] = [[] for _ in indices]
    for shift in shifts:
        plus = g.forward_with_taps(z + shift * epsilon, stats=base.stats)
        minus = g.forward_with_taps(z - shift * epsilon, stats=base.stats)
        for slot, index in enumerate(indices):
            second = (plus.taps[index] - base.taps[index] * 2.0 + minus.taps[index]) / (epsilon * epsilon)
            seconds[slot].append(_flat(second))
    return seconds


def hessian_layer_terms(
    g: TappedGenerator,
    z,
    config: PenaltyConfig,
    rng: Optional[np.random.Generator] = None,
    probes: Optional[np.ndarray] = None,
    ddof: int = 1,
    base: Optional[GeneratorOutput] = None,
) -> List[Tensor]:
    """Per-layer Hessian Penalty: max over outputs of the variance of second differences"""
    z = as_latent_batch(g, z)
    shifts = _probe_tensors(probes, rng, config, z)
    base = _base_pass(g, z, base)
    seconds = directional_second_differences(g, z, shifts, config.epsilon, config.layers, base)
    return [sample_variance(layer, ddof).max(axis=1).mean() for layer in seconds]


def hessian_penalty_stochastic(
    g: TappedGenerator,
    z,
    config: PenaltyConfig,
    rng: Optional[np.random.Generator] = None,
    probes: Optional[np.ndarray] = None,
    ddof: int = 1,
    base: Optional[GeneratorOutput] = None,
) -> Tensor:
    terms = hessian_layer_terms(g, z, config, rng, probes, ddof, base)
    return sum(terms[1:], terms[0])


PENALTY_TERMS = {
    "orojar": orojar_layer_terms,
    "hessian": hessian_layer_terms,
}


def penalty_terms(
    g: TappedGenerator,
    z,
    config: PenaltyConfig,
    rng: Optional[np.random.Generator] = None,
    base: Optional[GeneratorOutput] = None,
) -> List[Tensor]:
    """Per-layer terms for the configured penalty kind"""
    if (terms_fn := PENALTY_TERMS.get(config.kind)) is None:
        raise ValueError(f"Penalty kind {config.kind!r} has no terms")
    return terms_fn(g, z, config, rng=rng, base=base)


def hessian_offdiag_probe(
    g: TappedGenerator,
    z,
    i: int,
    j: int,
    delta: float,
    layer: Optional[int] = None,
) -> float:
    """Batch mean of ‖∂²G/∂z_i∂z_j‖² from the four-point cross stencil.

    layer is a 1-based tap index; the final image is probed when it is None.
    """
    if i == j:
        raise ValueError("i and j must differ")
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    z = as_latent_batch(g, z)

    def offset(*coords: int) -> Tensor:
        step = np.zeros(g.latent_dim, dtype=z.dtype)
        for c in coords:
            step[c] = delta
        return z + Tensor(step, dtype=z.dtype)

    def read(out: GeneratorOutput) -> np.ndarray:
        value = out.image if layer is None else out.taps[_layer_indices(g, [layer])[0]]
        return value.data.reshape(z.shape[0], -1).astype(np.float64)

    with no_grad(), frozen_statistics():
        base = g.forward_with_taps(z)
        f_00 = read(base)
        f_10 = read(g.forward_with_taps(offset(i), stats=base.stats))
        f_01 = read(g.forward_with_taps(offset(j), stats=base.stats))
        f_11 = read(g.forward_with_taps(offset(i, j), stats=base.stats))
    mixed = (f_11 - f_10 - f_01 + f_00) / (delta * delta)
    return float((mixed ** 2).sum(axis=1).mean())
