"""
Layer module for orojar-lab
Parameter containers and the layers used by the generator, discriminator and VP classifier
"""
import contextlib
import contextvars
import logging
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .tensor import Tensor, batchnorm, conv2d, conv2d_transpose, default_dtype

logger = logging.getLogger(__name__)

BatchStats = Tuple[Tensor, Tensor]

_TRACK_RUNNING_STATS: contextvars.ContextVar = contextvars.ContextVar("track_running_stats", default=True)


class Parameter(Tensor):
    """Trainable leaf tensor"""

    def __init__(self, data: np.ndarray, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Base class: parameters and sub-modules are discovered from attributes in definition order"""

    training: bool = True

    def __init__(self):
        self.training = True
        self._buffers: Dict[str, np.ndarray] = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{index}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{name}", value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{name}", value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter and buffer keyed by dotted name"""
        state = {name: param.data.copy() for name, param in self.named_parameters()}
        state.update({name: buffer.copy() for name, buffer in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Copy values in place; callers validate names and shapes first (see checkpoint)"""
        for name, param in self.named_parameters():
            param.data[...] = state[name]
        for name, buffer in self.named_buffers():
            buffer[...] = state[name]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None


@contextlib.contextmanager
def frozen(module: Module) -> Iterator[Module]:
    """Stop gradient accumulation into a module's parameters for a block"""
    params = module.parameters()
    flags = [param.requires_grad for param in params]
    for param in params:
        param.requires_grad = False
    try:
        yield module
    finally:
        for param, flag in zip(params, flags):
            param.requires_grad = flag


@contextlib.contextmanager
def frozen_statistics() -> Iterator[None]:
    """Normalize with batch statistics but leave BatchNorm running buffers untouched"""
    token = _TRACK_RUNNING_STATS.set(False)
    try:
        yield
    finally:
        _TRACK_RUNNING_STATS.reset(token)


@contextlib.contextmanager
def evaluating(module: Module) -> Iterator[Module]:
    """Put a module in evaluation mode for a block, restoring its previous mode"""
    was_training = module.training
    module.eval()
    try:
        yield module
    finally:
        module.train(was_training)


def _normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape).astype(default_dtype())


def _zeros(shape: Tuple[int, ...]) -> np.ndarray:
    return np.zeros(shape, dtype=default_dtype())


class Linear(Module):
    """y = x Wᵀ + b with W of shape (out_features, in_features)"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, init_std: float = 0.02):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(_normal(rng, (out_features, in_features), init_std))
        self.bias = Parameter(_zeros((out_features,)))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight.T + self.bias


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int,
        padding: int,
        rng: np.random.Generator,
        init_std: float = 0.02,
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), init_std))
        self.bias = Parameter(_zeros((out_channels,)))

    def forward(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        return out + self.bias.reshape((1, -1, 1, 1))


class ConvTranspose2d(Module):
    """Transposed convolution; weight shape is (in_channels, out_channels, k, k)"""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int,
        padding: int,
        rng: np.random.Generator,
        init_std: float = 0.02,
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(_normal(rng, (in_channels, out_channels, kernel_size, kernel_size), init_std))
        self.bias = Parameter(_zeros((out_channels,)))

    def forward(self, x: Tensor) -> Tensor:
        out = conv2d_transpose(x, self.weight, stride=self.stride, padding=self.padding)
        return out + self.bias.reshape((1, -1, 1, 1))


class BatchNorm(Module):
    """Batch normalization over the channel axis.

    Training mode normalizes with batch statistics and updates the running estimates as
    running = momentum * running + (1 - momentum) * batch. Evaluation mode uses the running
    estimates. Passing `stats` reuses statistics from an earlier pass and leaves the running
    estimates alone, so finite-difference passes see the same normalization.
    """

    def __init__(self, num_features: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(num_features, dtype=default_dtype()))
        self.beta = Parameter(_zeros((num_features,)))
        self.register_buffer("running_mean", _zeros((num_features,)))
        self.register_buffer("running_var", np.ones(num_features, dtype=default_dtype()))

    def forward(self, x: Tensor, stats: Optional[BatchStats] = None) -> Tuple[Tensor, BatchStats]:
        if not self.training:
            shape = (1, self.num_features) + (1,) * (x.ndim - 2)
            mean = Tensor(self._buffers["running_mean"].reshape(shape), dtype=x.dtype)
            var = Tensor(self._buffers["running_var"].reshape(shape), dtype=x.dtype)
            y, _, _ = batchnorm(x, self.gamma, self.beta, mean, var, eps=self.eps)
            return y, (mean, var)

        if stats is not None:
            y, mean, var = batchnorm(x, self.gamma, self.beta, stats[0], stats[1], eps=self.eps)
            return y, (mean, var)

        y, mean, var = batchnorm(x, self.gamma, self.beta, eps=self.eps)
        if not _TRACK_RUNNING_STATS.get():
            return y, (mean, var)
        count = x.size // self.num_features
        unbiased = var.data.reshape(-1) * (count / max(count - 1, 1))
        running_mean = self._buffers["running_mean"]
        running_var = self._buffers["running_var"]
        running_mean[...] = self.momentum * running_mean + (1.0 - self.momentum) * mean.data.reshape(-1)
        running_var[...] = self.momentum * running_var + (1.0 - self.momentum) * unbiased
        return y, (mean, var)


def parameter_count(module: Module) -> int:
    return sum(param.size for param in module.parameters())
