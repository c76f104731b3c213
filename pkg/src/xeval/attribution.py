"""Integrated Gradients over latent dimensions and the attribution maps built from them."""
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from src.ndgrad import ops
from src.ndgrad.errors import NonFiniteError, ShapeError
from src.ndgrad.tensor import Tensor

ScoreFn = Callable[[Tensor], Tensor]


@contextmanager
def frozen_parameters(model) -> Iterator[None]:
    """Stop parameters from recording graph nodes, so backward only reaches the inputs."""
    params = model.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


def integrated_gradients(score_fn: ScoreFn, z: np.ndarray, baseline: Optional[np.ndarray] = None,
                         steps: int = 128) -> np.ndarray:
    """
    Riemann-midpoint Integrated Gradients of a batched score function.

    `score_fn` maps a (B, k) tensor to B scores, one per row. The whole path is
    evaluated as a single batch of `steps` rows.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    baseline = np.zeros_like(z) if baseline is None else np.asarray(baseline, dtype=np.float64).reshape(-1)
    if baseline.shape != z.shape:
        raise ShapeError("integrated_gradients", [z.shape, baseline.shape])
    if steps < 1:
        raise ValueError(f"steps must be positive, got {steps}")
    alphas = (np.arange(steps) + 0.5) / steps
    path = Tensor(baseline + alphas[:, None] * (z - baseline), requires_grad=True)
    scores = score_fn(path)
    if scores.shape != (steps,):
        raise ShapeError("integrated_gradients", [scores.shape], f"score_fn must return ({steps},)")
    scores.sum().backward()
    if path.grad is None:
        return np.zeros_like(z)
    if not np.all(np.isfinite(path.grad)):
        raise NonFiniteError("integrated_gradients")
    return (z - baseline) * path.grad.mean(axis=0)


def concept_score_fn(model, concept: int) -> ScoreFn:
    """Score of one concept as a function of the latent vector."""
    return lambda latent: ops.sigmoid(model.concept_logits_from_latent(latent))[:, concept]


def concept_attributions(model, z: np.ndarray, n_concepts: int, steps: int = 128,
                         baseline: Optional[np.ndarray] = None) -> np.ndarray:
    """
    IG of every annotated concept score with respect to one latent vector, shape (n_concepts, k).

    All concepts share one forward and one backward: concept c reads its own
    block of `steps` path rows.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    baseline = np.zeros_like(z) if baseline is None else np.asarray(baseline, dtype=np.float64).reshape(-1)
    alphas = (np.arange(steps) + 0.5) / steps
    single = baseline + alphas[:, None] * (z - baseline)
    path = Tensor(np.tile(single, (n_concepts, 1)), requires_grad=True)
    scores = ops.sigmoid(model.concept_logits_from_latent(path))
    selector = np.zeros(scores.shape)
    for c in range(n_concepts):
        selector[c * steps:(c + 1) * steps, c] = 1.0
    (scores * selector).sum().backward()
    grads = path.grad if path.grad is not None else np.zeros(path.shape)
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("concept_attributions")
    mean_grads = grads.reshape(n_concepts, steps, -1).mean(axis=1)
    return (z - baseline)[None, :] * mean_grads


def normalize_attributions(raw: np.ndarray) -> np.ndarray:
    """Absolute values divided by the largest absolute value; all zeros stay zeros."""
    magnitude = np.abs(np.asarray(raw, dtype=np.float64))
    peak = magnitude.max() if magnitude.size else 0.0
    return magnitude / peak if peak > 0 else np.zeros_like(magnitude)


def top_k_dims(scores: np.ndarray, k_sel: int) -> np.ndarray:
    """Indices of the k_sel largest scores, descending; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= k_sel <= scores.size:
        raise ValueError(f"k_sel must lie in [1, {scores.size}], got {k_sel}")
    return np.argsort(-scores, kind="stable")[:k_sel]


@dataclass
class AttributionMap:
    concept: str
    raw: np.ndarray
    dim_scores: np.ndarray = field(init=False)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        self.dim_scores = normalize_attributions(self.raw)

    def top_k(self, k_sel: int) -> np.ndarray:
        return top_k_dims(self.dim_scores, k_sel)

    def completeness_gap(self, full_change: float) -> float:
        """|sum(IG) - (F(z) - F(baseline))| relative to the change itself."""
        if full_change == 0:
            return float(abs(self.raw.sum()))
        return float(abs(self.raw.sum() - full_change) / abs(full_change))
