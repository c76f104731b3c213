"""Test-time intervention: overwrite predicted concept scores with ground truth and re-run the head."""
from typing import List, Optional, Sequence

import numpy as np

from config.logging_config import setup_logger
from src.models.data_model import InterventionResult
from src.ndgrad.tensor import Tensor, no_grad
from src.utils.seeding import substream
from src.xeval.metrics import predict_split

ORDERS = ("deviant", "random")


def _check_indices(indices: Sequence[int], n_annotated: int) -> np.ndarray:
    indices = np.asarray(list(indices), dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= n_annotated):
        raise ValueError(f"intervened concept indices {indices.tolist()} outside annotated range [0, {n_annotated})")
    return indices


def intervene_scores(model, scores: np.ndarray, concept_labels: np.ndarray, indices: Sequence[int]) -> np.ndarray:
    """Predicted classes after replacing scores[:, indices] with the labels; scores and labels are (B, n)."""
    scores = np.array(scores, dtype=np.float64)
    indices = _check_indices(indices, scores.shape[1])
    if indices.size:
        scores[:, indices] = np.asarray(concept_labels, dtype=np.float64)[:, indices]
    with no_grad():
        return model.predict_from_scores(Tensor(scores)).predicted()


def intervene(model, image: np.ndarray, concept_labels: np.ndarray, label: int, indices: Sequence[int]) -> bool:
    """Whether replacing the chosen concept scores of one sample makes its prediction equal `label`."""
    predictions = predict_split(model, np.asarray(image)[None])
    new_class = intervene_scores(model, predictions.concept_scores, np.asarray(concept_labels)[None], indices)[0]
    return bool(new_class == label)


def intervention_order(scores: np.ndarray, concept_labels: np.ndarray, order: str = "deviant",
                       rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Per-sample concept ranking, (B, n).

    "deviant" ranks by |score - label| descending with ties to the lower index;
    "random" draws one permutation per sample from `rng`.
    """
    if order == "deviant":
        deviation = np.abs(np.asarray(scores) - np.asarray(concept_labels))
        return np.argsort(-deviation, axis=1, kind="stable")
    if order == "random":
        if rng is None:
            raise ValueError("random intervention order needs a generator")
        return np.stack([rng.permutation(scores.shape[1]) for _ in range(len(scores))])
    raise ValueError(f"Unknown intervention order '{order}'; expected one of {ORDERS}")


def concepts_for_fraction(fraction: float, n_annotated: int) -> int:
    """round(p * n) with halves rounded up."""
    return int(np.floor(fraction * n_annotated + 0.5))


def intervention_curve(model, images: np.ndarray, concept_labels: np.ndarray, labels: np.ndarray,
                       fractions: Sequence[float], seed: int = 0, order: str = "deviant",
                       rng: Optional[np.random.Generator] = None) -> List[InterventionResult]:
    """
    Corrected rate among initially misclassified samples for each intervened fraction.

    Returns an empty list, with a warning, when nothing is misclassified.
    """
    logger = setup_logger("Intervention", "evaluation")
    fractions = [float(p) for p in fractions]
    if any(p < 0 or p > 1 for p in fractions) or fractions != sorted(fractions):
        raise ValueError(f"fractions must be ascending within [0, 1], got {fractions}")

    predictions = predict_split(model, images)
    if predictions.concept_scores is None:
        raise ValueError("intervention needs a model with concept scores")
    wrong = np.flatnonzero(predictions.predicted != np.asarray(labels))
    if wrong.size == 0:
        logger.warning("No misclassified samples; intervention curve is empty")
        return []

    scores = predictions.concept_scores[wrong]
    truth = np.asarray(concept_labels, dtype=np.float64)[wrong]
    targets = np.asarray(labels)[wrong]
    n_annotated = scores.shape[1]
    if order == "random" and rng is None:
        rng = substream(seed, "intervention")
    ranking = intervention_order(scores, truth, order, rng)

    results = []
    for p in fractions:
        count = concepts_for_fraction(p, n_annotated)
        modified = scores.copy()
        if count:
            chosen = ranking[:, :count]
            rows = np.arange(len(wrong))[:, None]
            modified[rows, chosen] = truth[rows, chosen]
        with no_grad():
            new_classes = model.predict_from_scores(Tensor(modified)).predicted()
        rate = float(np.mean(new_classes == targets))
        results.append(InterventionResult(fraction_intervened=p, concepts_intervened=count,
                                          corrected_rate=rate, sample_count=int(wrong.size)))
        logger.info(f"Intervened on {count}/{n_annotated} concepts: corrected {rate:.4f} of {wrong.size} samples")
    return results
