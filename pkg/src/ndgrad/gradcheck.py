"""Central finite-difference gradient checks."""
from typing import Callable, Optional

import numpy as np

from src.ndgrad.tensor import Tensor, no_grad


def gradient_errors(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-4,
                    coords: Optional[int] = None, seed: int = 0, eps: float = 1e-8) -> np.ndarray:
    """
    Per-coordinate relative error |analytic - numeric| / (|analytic| + eps).

    `f` must map x to a scalar tensor. x is perturbed in place and restored, so
    it may be a model parameter that `f` reads through the model. `coords`
    limits the check to a seeded random subset of coordinates.
    """
    x.grad = None
    f(x).backward()
    analytic = x.grad.reshape(-1).copy() if x.grad is not None else np.zeros(x.size)

    flat = x.data.reshape(-1)
    if coords is None or coords >= x.size:
        indices = np.arange(x.size)
    else:
        indices = np.sort(np.random.default_rng(seed).choice(x.size, size=coords, replace=False))

    numeric = np.empty(len(indices))
    with no_grad():
        for i, idx in enumerate(indices):
            original = flat[idx]
            flat[idx] = original + h
            plus = f(x).item()
            flat[idx] = original - h
            minus = f(x).item()
            flat[idx] = original
            numeric[i] = (plus - minus) / (2.0 * h)

    chosen = analytic[indices]
    return np.abs(chosen - numeric) / (np.abs(chosen) + eps)


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-4,
                      coords: Optional[int] = None, seed: int = 0, eps: float = 1e-8) -> float:
    """Max relative error between backward and central differences."""
    return float(np.max(gradient_errors(f, x, h=h, coords=coords, seed=seed, eps=eps)))
