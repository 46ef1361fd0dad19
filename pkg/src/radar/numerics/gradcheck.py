"""Central finite-difference gradients, used as the reference for autodiff."""

from __future__ import annotations

from typing import Callable

import numpy as np

from radar.core.validation import validate_positive
from radar.numerics.tensor import NumericError, Tensor


def finite_difference_gradient(
    f: Callable[[Tensor], Tensor | float], x: Tensor, h: float = 1e-5
) -> Tensor:
    """
    Estimate df/dx coordinate by coordinate with central differences.

    Args:
        f: Scalar-valued function of a tensor shaped like ``x``
        x: Point at which to differentiate
        h: Step size

    Returns:
        Tensor shaped like ``x`` holding (f(x + h e_k) - f(x - h e_k)) / 2h

    Raises:
        ValidationError: If h is not positive
        NumericError: If f returns NaN or infinity
    """
    validate_positive(h, "h")
    base = np.array(x.data, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    out = grad.reshape(-1)

    def _eval(point: np.ndarray) -> float:
        value = f(Tensor(point.reshape(base.shape)))
        scalar = value.item() if isinstance(value, Tensor) else float(value)
        if not np.isfinite(scalar):
            raise NumericError("function returned a non-finite value")
        return scalar

    for k in range(flat.size):
        original = flat[k]
        flat[k] = original + h
        upper = _eval(flat)
        flat[k] = original - h
        lower = _eval(flat)
        flat[k] = original
        out[k] = (upper - lower) / (2.0 * h)
    return Tensor(grad)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / scale))
