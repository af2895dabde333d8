"""
Optimizer module for orojar-lab
"""
import logging
from typing import Dict, Iterable, List, Tuple

import numpy as np

from .nn import Parameter

logger = logging.getLogger(__name__)


class Adam:
    """Adaptive moment estimation over a named parameter list.

    State is keyed by parameter name so it can be checkpointed next to the module.
    """

    def __init__(
        self,
        named_parameters: Iterable[Tuple[str, Parameter]],
        lr: float = 2e-4,
        betas: Tuple[float, float] = (0.5, 0.999),
        eps: float = 1e-8,
    ):
        self.params: List[Tuple[str, Parameter]] = list(named_parameters)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(param.data) for name, param in self.params}
        self.v = {name: np.zeros_like(param.data) for name, param in self.params}
        self.last_grad_norm = 0.0

    def zero_grad(self) -> None:
        for _, param in self.params:
            param.grad = None

    def step(self) -> None:
        self.t += 1
        squared = 0.0
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, param in self.params:
            if param.grad is None:
                continue
            g = param.grad
            squared += float(np.sum(g.astype(np.float64) ** 2))
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            param.data -= update.astype(param.data.dtype)
        self.last_grad_norm = float(np.sqrt(squared))

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {"t": np.array(self.t, dtype=np.int64)}
        for name, _ in self.params:
            state[f"m.{name}"] = self.m[name].copy()
            state[f"v.{name}"] = self.v[name].copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.t = int(state["t"])
        for name, _ in self.params:
            self.m[name][...] = state[f"m.{name}"]
            self.v[name][...] = state[f"v.{name}"]
