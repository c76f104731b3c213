"""Accuracy, concept error and IoU, plus batched inference over a split."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.ndgrad.errors import ShapeError

CONCEPT_ERROR_KINDS = ("rmse", "zero_one")


def task_accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if predicted.shape != labels.shape:
        raise ShapeError("task_accuracy", [predicted.shape, labels.shape])
    return float(np.mean(predicted == labels)) if labels.size else 0.0


def concept_error(scores: np.ndarray, labels: np.ndarray, kind: str = "rmse") -> float:
    """rmse = sqrt(mean((score - label)^2)); zero_one = mean(round(score) != label)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ShapeError("concept_error", [scores.shape, labels.shape])
    if kind == "rmse":
        return float(np.sqrt(np.mean((scores - labels) ** 2)))
    if kind == "zero_one":
        # scores of exactly 0.5 round up
        return float(np.mean((scores >= 0.5).astype(np.float64) != labels))
    raise ValueError(f"Unknown concept error kind '{kind}'; expected one of {CONCEPT_ERROR_KINDS}")


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """|a & b| / |a | b|, defined as 0 when both masks are empty."""
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError("iou", [a.shape, b.shape])
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


@dataclass
class SplitPredictions:
    predicted: np.ndarray
    probs: np.ndarray
    concept_scores: Optional[np.ndarray]


def predict_split(model, images: np.ndarray, batch_size: int = 256) -> SplitPredictions:
    """Inference-mode predictions over a whole split, batch by batch, restoring the model's mode after."""
    was_training = model.training
    model.eval()
    probs, scores = [], []
    try:
        for start in range(0, len(images), batch_size):
            out = model.infer(images[start:start + batch_size])
            probs.append(out.pred.probs.data)
            if out.concepts is not None:
                scores.append(out.concepts.annotated_scores.data)
    finally:
        model.train(was_training)
    probs = np.concatenate(probs) if probs else np.zeros((0, 0))
    return SplitPredictions(
        predicted=np.argmax(probs, axis=1) if len(probs) else np.zeros(0, dtype=np.int64),
        probs=probs,
        concept_scores=np.concatenate(scores) if scores else None,
    )
