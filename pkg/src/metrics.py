"""
Metrics module for orojar-lab
Variation predictability, per-dimension activeness and pixel path length
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .config import MetricsConfig, PenaltyConfig
from .models import TappedGenerator
from .nn import Conv2d, Linear, Module, evaluating
from .optim import Adam
from .regularizers import orojar_exact_per_layer
from .tensor import Tensor, cross_entropy, no_grad

logger = logging.getLogger(__name__)

DEACTIVATION_RATIO = 0.1
RENDER_CHUNK = 256


class MetricError(RuntimeError):
    """Exception for metrics that cannot produce a trustworthy number"""
    pass


def generate(g: TappedGenerator, latents: np.ndarray, chunk: int = RENDER_CHUNK) -> np.ndarray:
    """Images for a latent array, rendered in evaluation mode without a graph"""
    outputs = []
    with no_grad():
        for start in range(0, len(latents), chunk):
            batch = Tensor(latents[start:start + chunk])
            if isinstance(g, Module):
                with evaluating(g):
                    outputs.append(g.forward_with_taps(batch).image.data)
            else:
                outputs.append(g.forward_with_taps(batch).image.data)
    return np.concatenate(outputs, axis=0)


class VPClassifier(Module):
    """Two stride-2 conv blocks and a linear head over the image difference"""

    def __init__(self, resolution: int, classes: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(1, 16, 4, 2, 1, rng, init_std=0.1)
        self.conv2 = Conv2d(16, 32, 4, 2, 1, rng, init_std=0.1)
        self.head = Linear(32 * (resolution // 4) ** 2, classes, rng, init_std=0.05)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(x).leaky_relu(0.2)
        h = self.conv2(h).leaky_relu(0.2)
        return self.head(h.flatten(1))


def vp_pairs(g: TappedGenerator, n_pairs: int, delta: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Image differences G(z + δe_i) − G(z) with labels i"""
    m = g.latent_dim
    z = rng.standard_normal((n_pairs, m))
    labels = rng.integers(0, m, size=n_pairs)
    shifted = z.copy()
    shifted[np.arange(n_pairs), labels] += delta
    diffs = generate(g, shifted) - generate(g, z)
    if diffs.ndim != 4:
        raise MetricError(f"VP needs (N, 1, H, W) images, generator produced shape {diffs.shape[1:]}")
    return diffs, labels


def _train_vp_classifier(
    diffs: np.ndarray,
    labels: np.ndarray,
    classes: int,
    epochs: int,
    rng: np.random.Generator,
    batch_size: int = 64,
    lr: float = 1e-3,
) -> float:
    order = rng.permutation(len(diffs))
    split = int(0.8 * len(diffs))
    train_idx, test_idx = order[:split], order[split:]
    model = VPClassifier(diffs.shape[-1], classes, rng)
    optimizer = Adam(model.named_parameters(), lr=lr, betas=(0.9, 0.999))

    for epoch in range(epochs):
        shuffled = rng.permutation(train_idx)
        for start in range(0, len(shuffled), batch_size):
            batch = shuffled[start:start + batch_size]
            loss = cross_entropy(model(Tensor(diffs[batch])), labels[batch])
            if not np.isfinite(loss.item()):
                raise MetricError(f"VP classifier diverged at epoch {epoch} (loss {loss.item()})")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

    correct = 0
    with no_grad():
        for start in range(0, len(test_idx), RENDER_CHUNK):
            batch = test_idx[start:start + RENDER_CHUNK]
            logits = model(Tensor(diffs[batch])).data
            correct += int((logits.argmax(axis=1) == labels[batch]).sum())
    return correct / max(1, len(test_idx))


@dataclass
class VPResult:
    accuracy: float
    std: float
    accuracies: List[float]


def vp_score(
    g: TappedGenerator,
    n_pairs: int,
    epochs: int,
    seed: int,
    delta: float = 1.0,
    repeats: int = 3,
    batch_size: int = 64,
    lr: float = 1e-3,
    progress: bool = False,
) -> VPResult:
    """Held-out accuracy of predicting the perturbed dimension, mean and std over repeats"""
    if n_pairs < 1000:
        raise ValueError(f"n_pairs must be >= 1000, got {n_pairs}")
    accuracies = []
    for repeat in tqdm(range(repeats), desc="vp", disable=not progress):
        rng = np.random.default_rng([seed, repeat])
        diffs, labels = vp_pairs(g, n_pairs, delta, rng)
        accuracies.append(_train_vp_classifier(diffs, labels, g.latent_dim, epochs, rng, batch_size, lr))
        logger.info(f"VP repeat {repeat + 1}/{repeats}: accuracy {accuracies[-1]:.4f}")
    return VPResult(float(np.mean(accuracies)), float(np.std(accuracies)), accuracies)


def activeness(
    g: TappedGenerator,
    n_z: int,
    n_steps: int,
    rng: np.random.Generator,
    value_range: Tuple[float, float] = (-2.0, 2.0),
) -> np.ndarray:
    """Mean per-pixel variance of G while z_i sweeps the range, averaged over base latents"""
    if n_z < 32 or n_steps < 8:
        raise ValueError(f"Need n_z >= 32 and n_steps >= 8, got {n_z} and {n_steps}")
    m = g.latent_dim
    values = np.linspace(value_range[0], value_range[1], n_steps)
    base = rng.standard_normal((n_z, m))
    scores = np.zeros(m)
    for i in range(m):
        latents = np.repeat(base[:, None, :], n_steps, axis=1)
        latents[:, :, i] = values
        images = generate(g, latents.reshape(n_z * n_steps, m)).reshape(n_z, n_steps, -1).astype(np.float64)
        scores[i] = images.var(axis=1).mean()
    return scores


def path_length(
    g: TappedGenerator,
    n_paths: int,
    t_epsilon: float,
    rng: np.random.Generator,
    pairs: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    reject_outliers: bool = False,
) -> float:
    """Mean of ‖G(lerp(z1, z2, t + ε)) − G(lerp(z1, z2, t))‖² / ε² in pixel space.

    With reject_outliers, values outside the 1st to 99th percentile are dropped first.
    """
    if t_epsilon <= 0:
        raise ValueError(f"t_epsilon must be > 0, got {t_epsilon}")
    m = g.latent_dim
    if pairs is None:
        z1 = rng.standard_normal((n_paths, m))
        z2 = rng.standard_normal((n_paths, m))
    else:
        z1 = np.broadcast_to(np.atleast_2d(pairs[0]), (n_paths, m))
        z2 = np.broadcast_to(np.atleast_2d(pairs[1]), (n_paths, m))
    t = rng.uniform(0.0, 1.0 - t_epsilon, size=(n_paths, 1))
    start = z1 + t * (z2 - z1)
    end = z1 + (t + t_epsilon) * (z2 - z1)
    a = generate(g, start).reshape(n_paths, -1).astype(np.float64)
    b = generate(g, end).reshape(n_paths, -1).astype(np.float64)
    distances = ((b - a) ** 2).sum(axis=1) / t_epsilon ** 2

    if reject_outliers and n_paths >= 3:
        lo, hi = np.percentile(distances, [1, 99])
        distances = distances[(distances >= lo) & (distances <= hi)]
    return float(distances.mean())


@dataclass
class MetricsReport:
    """Evaluation summary written by the eval command"""
    vp_accuracy: float
    vp_std: float
    vp_accuracies: List[float]
    activeness: List[float]
    path_length: float
    path_length_filtered: float
    penalty_per_layer: List[float]
    sample_counts: Dict[str, int] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)

    @property
    def activeness_ranking(self) -> List[int]:
        """Dimension indices, most active first"""
        return [int(i) for i in np.argsort(-np.asarray(self.activeness), kind="stable")]

    @property
    def deactivated(self) -> List[int]:
        peak = max(self.activeness) if self.activeness else 0.0
        return [i for i, score in enumerate(self.activeness) if peak > 0 and score < DEACTIVATION_RATIO * peak]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "vp_accuracy": self.vp_accuracy,
            "vp_std": self.vp_std,
            "vp_accuracies": self.vp_accuracies,
            "activeness": self.activeness,
            "activeness_ranking": self.activeness_ranking,
            "deactivated_dimensions": self.deactivated,
            "path_length_pixel": self.path_length,
            "path_length_pixel_filtered": self.path_length_filtered,
            "penalty_per_layer": self.penalty_per_layer,
            "sample_counts": self.sample_counts,
            "seeds": self.seeds,
        }

    def summary_rows(self) -> List[Tuple[str, Any]]:
        rows: List[Tuple[str, Any]] = [
            ("vp_accuracy", self.vp_accuracy),
            ("vp_std", self.vp_std),
            ("path_length_pixel", self.path_length),
            ("path_length_pixel_filtered", self.path_length_filtered),
            ("deactivated_count", len(self.deactivated)),
        ]
        rows += [(f"penalty_l{i + 1}", value) for i, value in enumerate(self.penalty_per_layer)]
        return rows


def evaluate(
    g: TappedGenerator,
    config: MetricsConfig,
    penalty: PenaltyConfig,
    seed: int,
    value_range: Tuple[float, float] = (-2.0, 2.0),
    progress: bool = False,
) -> MetricsReport:
    """Compute every metric with seeds derived from `seed`"""
    seeds = {"vp": seed, "activeness": seed + 1, "path_length": seed + 2, "probe": seed + 3}
    vp = vp_score(g, config.vp_pairs, config.vp_epochs, seeds["vp"], config.vp_delta,
                  config.vp_repeats, config.vp_batch_size, config.vp_lr, progress)
    scores = activeness(g, config.activeness_nz, config.activeness_steps,
                        np.random.default_rng(seeds["activeness"]), value_range)

    raw = path_length(g, config.ppl_paths, config.ppl_epsilon, np.random.default_rng(seeds["path_length"]))
    filtered = path_length(g, config.ppl_paths, config.ppl_epsilon, np.random.default_rng(seeds["path_length"]),
                           reject_outliers=config.ppl_reject_outliers)

    probe = np.random.default_rng(seeds["probe"]).standard_normal((config.probe_batch, g.latent_dim))
    if isinstance(g, Module):
        with evaluating(g):
            per_layer = orojar_exact_per_layer(g, Tensor(probe), penalty)
    else:
        per_layer = orojar_exact_per_layer(g, Tensor(probe), penalty)

    if not all(np.isfinite(scores)):
        raise MetricError(f"Activeness produced non-finite scores: {scores.tolist()}")
    return MetricsReport(
        vp_accuracy=vp.accuracy,
        vp_std=vp.std,
        vp_accuracies=vp.accuracies,
        activeness=scores.tolist(),
        path_length=raw,
        path_length_filtered=filtered,
        penalty_per_layer=per_layer,
        sample_counts={"vp_pairs": config.vp_pairs, "vp_repeats": config.vp_repeats,
                       "activeness_nz": config.activeness_nz, "activeness_steps": config.activeness_steps,
                       "ppl_paths": config.ppl_paths, "probe_batch": config.probe_batch},
        seeds=seeds,
    )
