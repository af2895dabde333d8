"""
Models module for orojar-lab
Simple GAN generator with per-layer output taps, and the mirrored discriminator
"""
import copy
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Tuple, runtime_checkable

import numpy as np

from .config import FIRST_LAYER_MODES, ExperimentConfig, ModelConfig
from .nn import BatchNorm, BatchStats, Conv2d, ConvTranspose2d, Linear, Module
from .tensor import Tensor

logger = logging.getLogger(__name__)

INIT_STREAM = 0


class LatentWidthError(ValueError):
    """Exception for latent batches whose width differs from the generator's"""
    pass


@dataclass
class GeneratorOutput:
    """Per-layer taps G_1(z)..G_D(z), the final image, and the normalization stats used"""
    taps: List[Tensor]
    image: Tensor
    stats: Dict[str, BatchStats] = field(default_factory=dict)


@runtime_checkable
class TappedGenerator(Protocol):
    """Anything the regularizers, SeFa, discovery and metrics can probe"""
    latent_dim: int
    tap_count: int

    def forward_with_taps(self, z: Tensor, stats: Optional[Dict[str, BatchStats]] = None) -> GeneratorOutput:
        ...

    def parameters(self) -> list:
        ...


def as_latent_batch(g: TappedGenerator, z) -> Tensor:
    """Coerce z to a (B, m) tensor, rejecting the wrong width"""
    if not isinstance(z, Tensor):
        z = Tensor(z)
    if z.ndim == 1:
        z = z.reshape((1, -1))
    if z.ndim != 2 or z.shape[1] != g.latent_dim:
        raise LatentWidthError(f"Expected latent batch of width {g.latent_dim}, got shape {z.shape}")
    return z


class Generator(Module):
    """FC(m -> C*4*4), reshape, then stride-2 transposed convolutions halving the channels
    down to one, batchnorm + leaky-relu between blocks and a sigmoid output.

    Taps: the first tap is the fully-connected block output (W z + b in bare mode, after its
    normalization and activation otherwise); the remaining taps are the raw transposed
    convolution outputs, before normalization.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator, first_layer_mode: str = "with_norm_act"):
        super().__init__()
        if first_layer_mode not in FIRST_LAYER_MODES:
            raise ValueError(f"Unknown first layer mode: {first_layer_mode}")
        self.config = config
        self.latent_dim = config.latent_dim
        self.tap_count = config.tap_count
        self.first_layer_mode = first_layer_mode
        self.slope = config.leaky_slope

        channels = config.base_channels
        self.fc = Linear(config.latent_dim, channels * 16, rng, config.init_std)
        self.fc_norm = BatchNorm(channels * 16, momentum=config.bn_momentum)

        n_up = config.layer_count - 1
        self.deconvs: List[ConvTranspose2d] = []
        self.norms: List[BatchNorm] = []
        in_channels = channels
        for index in range(n_up):
            last = index == n_up - 1
            out_channels = 1 if last else in_channels // 2
            self.deconvs.append(ConvTranspose2d(in_channels, out_channels, 4, 2, 1, rng, config.init_std))
            if not last:
                self.norms.append(BatchNorm(out_channels, momentum=config.bn_momentum))
            in_channels = out_channels

    @property
    def layer_count(self) -> int:
        return 1 + len(self.deconvs)

    def first_layer_weight(self) -> np.ndarray:
        """Weight W of the fully-connected first layer, shape (hidden, m)"""
        return self.fc.weight.data

    def forward_with_taps(self, z, stats: Optional[Dict[str, BatchStats]] = None) -> GeneratorOutput:
        z = as_latent_batch(self, z)
        stats = stats or {}
        used: Dict[str, BatchStats] = {}

        h = self.fc(z)
        if self.first_layer_mode == "with_norm_act":
            h, used["fc_norm"] = self.fc_norm(h, stats.get("fc_norm"))
            h = h.leaky_relu(self.slope)
        taps = [h]

        h = h.reshape((z.shape[0], self.config.base_channels, 4, 4))
        for index, deconv in enumerate(self.deconvs):
            h = deconv(h)
            taps.append(h)
            if index < len(self.norms):
                key = f"norms.{index}"
                h, used[key] = self.norms[index](h, stats.get(key))
                h = h.leaky_relu(self.slope)

        return GeneratorOutput(taps[:self.tap_count], h.sigmoid(), used)

    def forward(self, z) -> Tensor:
        return self.forward_with_taps(z).image


def first_layer_variant(g: Generator, mode: str) -> Generator:
    """View of g sharing its parameters, with the first layer's norm/activation on or off"""
    if mode not in FIRST_LAYER_MODES:
        raise ValueError(f"Unknown first layer mode: {mode}")
    view = copy.copy(g)
    view.first_layer_mode = mode
    return view


class Discriminator(Module):
    """Mirror of the generator: stride-2 convolutions doubling channels up to C at 4x4,
    batchnorm after every convolution but the first, leaky-relu, then a linear logit."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.slope = config.leaky_slope
        n_down = config.layer_count - 1
        widths = [config.base_channels // 2 ** (n_down - 1 - i) for i in range(n_down)]
        self.convs: List[Conv2d] = []
        self.norms: List[BatchNorm] = []
        in_channels = 1
        for index, out_channels in enumerate(widths):
            self.convs.append(Conv2d(in_channels, out_channels, 4, 2, 1, rng, config.init_std))
            if index > 0:
                self.norms.append(BatchNorm(out_channels, momentum=config.bn_momentum))
            in_channels = out_channels
        self.head = Linear(config.base_channels * 16, 1, rng, config.init_std)

    def forward(self, x) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x)
        for index, conv in enumerate(self.convs):
            h = conv(h)
            if index > 0:
                h, _ = self.norms[index - 1](h)
            h = h.leaky_relu(self.slope)
        return self.head(h.flatten(1))


def build_models(config: ExperimentConfig) -> Tuple[Generator, Discriminator]:
    """Deterministic fresh generator and discriminator for an experiment seed"""
    rng = np.random.default_rng([config.seed, INIT_STREAM])
    generator = Generator(config.model, rng, config.train.first_layer_mode)
    discriminator = Discriminator(config.model, rng)
    return generator, discriminator
