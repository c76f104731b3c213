"""
Aggregation z -> z' -> c and decomposition c -> z_hat' -> z_hat.

Both directions keep one independent scalar network per latent dimension, so
z'_j depends on z_j alone and z_hat_j on z_hat'_j alone; all mixing happens in
the single fully connected layers f and g.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from src.models.data_model import ModelConfig
from src.ndgrad import ops
from src.ndgrad.errors import ShapeError
from src.ndgrad.nn import Linear, Module, PerDimensionMLP
from src.ndgrad.tensor import Tensor, as_tensor


@dataclass
class ConceptVector:
    """Concept logits for a batch; the first `annotated_count` columns carry labels."""
    logits: Tensor
    annotated_count: int
    scores: Tensor = field(init=False)

    def __post_init__(self):
        self.scores = ops.sigmoid(self.logits)

    @property
    def annotated_logits(self) -> Tensor:
        return self.logits[:, :self.annotated_count]

    @property
    def annotated_scores(self) -> Tensor:
        return self.scores[:, :self.annotated_count]


class ColumnwiseTransform(Module):
    """Fixed per-column functions, one callable per latent dimension. Has no parameters."""

    def __init__(self, functions: Sequence[Callable[[Tensor], Tensor]]):
        super().__init__()
        self.functions = list(functions)

    def forward(self, v: Tensor) -> Tensor:
        if v.ndim != 2 or v.shape[1] != len(self.functions):
            raise ShapeError("columnwise_transform", [v.shape], f"expected (B, {len(self.functions)})")
        columns = [fn(v[:, j:j + 1]) for j, fn in enumerate(self.functions)]
        return ops.concat(columns, axis=1)


class Aggregator(Module):
    """A(z) = [a_1(z_1), ..., a_k(z_k)], then logits = f(A(z))."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, a: Optional[Module] = None):
        super().__init__()
        self.latent_dim = cfg.latent_dim
        self.n_annotated = cfg.n_annotated
        self.a = a if a is not None else PerDimensionMLP(cfg.latent_dim, cfg.hidden, rng, cfg.slope)
        self.f = Linear(cfg.latent_dim, cfg.n_total, rng)

    def forward(self, z: Tensor) -> Tuple[Tensor, ConceptVector]:
        z = as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError("aggregate", [z.shape], f"expected (B, {self.latent_dim})")
        z_prime = self.a(z)
        return z_prime, ConceptVector(self.f(z_prime), self.n_annotated)


class Decomposer(Module):
    """z_hat' = g(c), then z_hat_j = d_j(z_hat'_j)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, d: Optional[Module] = None):
        super().__init__()
        self.n_total = cfg.n_total
        self.g = Linear(cfg.n_total, cfg.latent_dim, rng)
        self.d = d if d is not None else PerDimensionMLP(cfg.latent_dim, cfg.hidden, rng, cfg.slope)

    def forward(self, scores: Tensor) -> Tuple[Tensor, Tensor]:
        scores = as_tensor(scores)
        if scores.ndim != 2 or scores.shape[1] != self.n_total:
            raise ShapeError("decompose", [scores.shape], f"expected (B, {self.n_total})")
        z_hat_prime = self.g(scores)
        return z_hat_prime, self.d(z_hat_prime)


def set_identity_linear(layer: Linear) -> None:
    """weight = [I | 0] in (in, out) layout, zero bias."""
    layer.weight.data[...] = np.eye(layer.in_features, layer.out_features)
    layer.bias.data[...] = 0.0
