"""Loss primitives shared by the model heads."""
from typing import Optional

import numpy as np

from src.ndgrad import ops
from src.ndgrad.errors import ShapeError
from src.ndgrad.tensor import Tensor


def bce_with_logits(logits: Tensor, targets: np.ndarray, pos_weight: Optional[np.ndarray] = None) -> Tensor:
    """
    Elementwise binary cross-entropy computed from logits.

    pos_weight * y * log(1 + e^-x) + (1 - y) * log(1 + e^x); unit weights give
    the plain BCE of sigmoid(x) against y.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError("bce_with_logits", [logits.shape, targets.shape])
    weight = np.ones(logits.shape[-1]) if pos_weight is None else np.asarray(pos_weight, dtype=np.float64)
    positive = ops.softplus(-logits) * (targets * weight)
    negative = ops.softplus(logits) * (1.0 - targets)
    return positive + negative


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[y]."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", [logits.shape, labels.shape])
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"class index out of range [0, {logits.shape[1]}): {labels.tolist()}")
    labels = labels.astype(np.int64)
    log_probs = ops.log_softmax(logits, axis=1)
    picked = log_probs[np.arange(logits.shape[0]), labels]
    return -picked.mean()


def squared_error_sum(a: Tensor, b: Tensor) -> Tensor:
    """Per-sample sum of squared differences over all non-batch axes."""
    if a.shape != b.shape:
        raise ShapeError("squared_error_sum", [a.shape, b.shape])
    diff = a - b
    return (diff * diff).sum(axis=tuple(range(1, a.ndim)))
