from __future__ import annotations

from typing import Callable

import numpy as np

from .rng import Rng
from .tensor import Tensor


class NonFiniteError(ArithmeticError):
    """A function under gradient check produced a non-finite value."""


def _evaluate(f: Callable[[Tensor], Tensor], x: Tensor) -> float:
    value = float(np.asarray(f(x).data).reshape(-1)[0])
    if not np.isfinite(value):
        raise NonFiniteError(f"finite_difference_check: f returned {value}")
    return value


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
                            max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between the analytic gradient of ``f`` at ``x`` and central differences.

    The error per coordinate is ``|analytic - numeric| / max(1e-8, |numeric|)``.
    ``max_coords`` restricts the comparison to a seeded random subset of
    coordinates for large inputs.
    """
    if h <= 0:
        raise ValueError("finite_difference_check: step h must be positive")
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    out = f(x)
    if out.data.size != 1:
        raise ValueError(f"finite_difference_check: f must return a scalar, got shape {out.shape}")
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"finite_difference_check: f returned {out.data}")
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None
    if not np.all(np.isfinite(analytic)):
        raise NonFiniteError("finite_difference_check: analytic gradient is not finite")

    flat = x.data.reshape(-1)
    coords = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        coords = np.sort(Rng(seed).permutation(flat.size)[:max_coords])
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        up = _evaluate(f, x)
        flat[i] = orig - h
        down = _evaluate(f, x)
        flat[i] = orig
        numeric = (up - down) / (2.0 * h)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1e-8, abs(numeric))
        worst = max(worst, err)
    x.requires_grad = was
    return worst
