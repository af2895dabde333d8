"""
Gradient checking module for orojar-lab
Compares reverse-mode gradients against central finite differences
"""
import logging
from typing import Callable, Iterable, Optional

import numpy as np

from .tensor import Tensor, grad, no_grad

logger = logging.getLogger(__name__)

STABILIZER = 1e-8


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Elementwise |a - n| / (|a| + |n| + 1e-8)"""
    return np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + STABILIZER)


def gradient_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-4) -> float:
    """Max relative error between the analytic gradient of scalar f at x and central differences.

    Args:
        f: Scalar-valued function of a single tensor
        x: Point of evaluation (its data is never modified)
        step: Finite-difference step, must be positive

    Returns:
        Max over coordinates of the relative error
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")

    leaf = Tensor(x.data, requires_grad=True, dtype=x.dtype)
    (analytic,) = grad(f(leaf), [leaf])

    base = np.array(x.data, copy=True)
    numeric = np.zeros_like(base)
    with no_grad():
        for index in np.ndindex(base.shape):
            plus = base.copy()
            plus[index] += step
            minus = base.copy()
            minus[index] -= step
            f_plus = f(Tensor(plus, dtype=base.dtype)).item()
            f_minus = f(Tensor(minus, dtype=base.dtype)).item()
            numeric[index] = (f_plus - f_minus) / (2.0 * step)

    error = float(relative_error(analytic, numeric).max()) if base.size else 0.0
    logger.debug(f"gradient_check over {base.size} coordinates: max relative error {error:.3e}")
    return error


def parameter_gradient_check(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    step: float = 1e-5,
    indices: Optional[Iterable[tuple]] = None,
) -> float:
    """Same check for a parameter captured inside loss_fn.

    The parameter is perturbed in place and restored afterwards. loss_fn must be a pure
    function of the current parameter values (fix every random draw inside it).
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")

    saved_grad = param.grad
    param.grad = None
    try:
        loss_fn().backward()
        analytic_full = param.grad if param.grad is not None else np.zeros_like(param.data)
    finally:
        param.grad = saved_grad

    probe = list(indices) if indices is not None else list(np.ndindex(param.shape))
    analytic = np.array([analytic_full[i] for i in probe])
    numeric = np.zeros_like(analytic)
    with no_grad():
        for n, index in enumerate(probe):
            original = param.data[index]
            try:
                param.data[index] = original + step
                f_plus = loss_fn().item()
                param.data[index] = original - step
                f_minus = loss_fn().item()
            finally:
                param.data[index] = original
            numeric[n] = (f_plus - f_minus) / (2.0 * step)

    return float(relative_error(analytic, numeric).max()) if probe else 0.0
