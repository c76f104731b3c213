from typing import Optional

import numpy as np

from src.ndgrad.errors import ShapeError
from src.ndgrad.losses import bce_with_logits, squared_error_sum
from src.ndgrad.tensor import Tensor


def class_balance_weights(labels: np.ndarray, lo: float = 0.1, hi: float = 10.0) -> np.ndarray:
    """
    Per-concept positive weights negatives/positives, clipped to [lo, hi].
    A concept with no positives gets the upper bound.
    """
    labels = np.asarray(labels, dtype=np.float64)
    positives = labels.sum(axis=0)
    negatives = labels.shape[0] - positives
    ratio = np.divide(negatives, positives, out=np.full_like(positives, hi), where=positives > 0)
    return np.clip(ratio, lo, hi)


def concept_loss(annotated_logits: Tensor, labels: np.ndarray, weights: Optional[np.ndarray] = None) -> Tensor:
    """Weighted BCE summed over the annotated concepts, mean over the batch."""
    labels = np.asarray(labels, dtype=np.float64)
    if annotated_logits.shape != labels.shape:
        raise ShapeError("concept_loss", [annotated_logits.shape, labels.shape])
    return bce_with_logits(annotated_logits, labels, weights).sum(axis=1).mean()


def drc_loss(z: Tensor, z_hat: Tensor) -> Tensor:
    """Squared L2 distance between sampled and reconstructed factors, mean over the batch."""
    return squared_error_sum(z, z_hat).mean()


def sparsity_penalty(z_prime: Tensor) -> Tensor:
    """L1 norm of the transformed factors, mean over the batch."""
    return z_prime.abs().sum(axis=1).mean()
