"""Input-gradient saliency of single latent dimensions, and concept heat maps composed from them."""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.ndgrad.errors import ShapeError
from src.ndgrad.tensor import Tensor
from src.xeval.attribution import frozen_parameters

SALIENCY_THRESHOLD = 150 / 255


@dataclass
class SaliencyMask:
    heat: np.ndarray
    binary: np.ndarray

    @classmethod
    def from_heat(cls, heat: np.ndarray, threshold: float = SALIENCY_THRESHOLD) -> "SaliencyMask":
        return cls(heat, heat > threshold)


def box_filter(images: np.ndarray, size: int = 3) -> np.ndarray:
    """Mean over a size x size window with zero padding; works on (H, W) or (B, H, W)."""
    pad = size // 2
    widths = [(0, 0)] * (images.ndim - 2) + [(pad, pad), (pad, pad)]
    padded = np.pad(images, widths)
    windows = sliding_window_view(padded, (size, size), axis=(-2, -1))
    return windows.mean(axis=(-2, -1))


def normalize_heat(heat: np.ndarray) -> np.ndarray:
    """Scale each map so its maximum is 1; all-zero maps stay zero."""
    peak = heat.reshape(heat.shape[0], -1).max(axis=1).reshape(-1, 1, 1)
    return np.divide(heat, peak, out=np.zeros_like(heat), where=peak > 0)


def dim_saliency_batch(model, images: np.ndarray, dim: int) -> np.ndarray:
    """
    Normalized |d mu[dim] / d x| maps, (B, H, W), for a batch of images.

    The model must be in inference mode, so samples do not interact through
    batch statistics and one backward serves the whole batch.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ShapeError("dim_saliency", [images.shape], "expected (B, H, W)")
    if model.training:
        raise RuntimeError("saliency needs the model in inference mode")
    x = Tensor(images, requires_grad=True)
    with frozen_parameters(model):
        mu = model.latent_mean(x)
        if not 0 <= dim < mu.shape[1]:
            raise IndexError(f"latent dimension {dim} out of range [0, {mu.shape[1]})")
        mu[:, dim].sum().backward()
    grads = np.abs(x.grad) if x.grad is not None else np.zeros(images.shape)
    return normalize_heat(box_filter(grads))


def dim_saliency(model, image: np.ndarray, dim: int, threshold: float = SALIENCY_THRESHOLD) -> SaliencyMask:
    heat = dim_saliency_batch(model, np.asarray(image)[None], dim)[0]
    return SaliencyMask.from_heat(heat, threshold)


def concept_heat(dim_heats: np.ndarray, dim_scores: np.ndarray, dims: np.ndarray) -> np.ndarray:
    """Attribution-weighted mean of the selected dimensions' heat maps, renormalized to max 1."""
    weights = np.asarray(dim_scores, dtype=np.float64)[dims]
    if weights.sum() <= 0:
        weights = np.ones_like(weights)
    combined = np.tensordot(weights / weights.sum(), dim_heats[dims], axes=1)
    return normalize_heat(combined[None])[0]
