"""Linear task predictor over the annotated concept scores."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
import pandas as pd

from src.ndgrad import ops
from src.ndgrad.errors import ShapeError
from src.ndgrad.losses import cross_entropy
from src.ndgrad.nn import Linear, Module
from src.ndgrad.tensor import Tensor, as_tensor
from src.utils.io import write_csv


@dataclass
class TaskPrediction:
    logits: Tensor
    probs: Tensor = field(init=False)

    def __post_init__(self):
        self.probs = ops.softmax(self.logits, axis=1)

    def predicted(self) -> np.ndarray:
        return np.argmax(self.logits.data, axis=1)


class TaskHead(Module):
    """h(c) = w_0 + sum_i w_i c_i per class, reading only the first n concept scores."""

    def __init__(self, n_annotated: int, n_classes: int, rng: np.random.Generator):
        super().__init__()
        self.n_annotated = n_annotated
        self.n_classes = n_classes
        self.h = Linear(n_annotated, n_classes, rng)

    def forward(self, scores: Tensor) -> TaskPrediction:
        scores = as_tensor(scores)
        if scores.ndim != 2 or scores.shape[1] < self.n_annotated:
            raise ShapeError("predict", [scores.shape], f"needs at least {self.n_annotated} concept scores")
        annotated = scores if scores.shape[1] == self.n_annotated else scores[:, :self.n_annotated]
        return TaskPrediction(self.h(annotated))

    def weight_table(self, concept_names: Sequence[str]) -> pd.DataFrame:
        """One row per annotated concept plus the bias row, one column per class."""
        if len(concept_names) != self.n_annotated:
            raise ValueError(f"expected {self.n_annotated} concept names, got {len(concept_names)}")
        rows = []
        for name, weights in zip(list(concept_names) + ["bias"], np.vstack([self.h.weight.data, self.h.bias.data])):
            row = {"concept": name}
            row.update({f"class_{c}": float(w) for c, w in enumerate(weights)})
            rows.append(row)
        return pd.DataFrame(rows)

    def export_weights(self, path: Union[str, Path], concept_names: Sequence[str]) -> Path:
        return write_csv(path, self.weight_table(concept_names))


def pred_loss(pred: TaskPrediction, labels: Union[np.ndarray, List[int]]) -> Tensor:
    """Cross-entropy from logits, mean over the batch."""
    return cross_entropy(pred.logits, np.asarray(labels))
