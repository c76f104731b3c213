"""The composite objective and its per-term breakdown."""
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from src.aggdec.losses import concept_loss, drc_loss, sparsity_penalty
from src.drl.vae import kl_divergence, reconstruction_loss
from src.models.data_model import Lambdas, TrainConfig
from src.ndgrad.errors import NonFiniteError
from src.ndgrad.tensor import Tensor
from src.taskhead.head import pred_loss
from src.trainer.model import BlackBoxModel, CbmModel, ConceptModel


@dataclass
class Batch:
    images: np.ndarray
    concepts: np.ndarray
    labels: np.ndarray
    noise: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class LossBreakdown:
    """`terms` holds raw term values; `contributions` the weighted values that sum to `total`."""
    total: Tensor
    terms: Dict[str, float] = field(default_factory=dict)
    contributions: Dict[str, float] = field(default_factory=dict)


def stage_lambdas(lambdas: Lambdas, stage: int) -> Lambdas:
    """Stage 1 trains the VAE alone, stage 2 drops the prediction term, stage 3 uses every weight."""
    if stage == 1:
        return Lambdas(con=0.0, pred=0.0, drc=0.0, sparsity=0.0)
    if stage == 2:
        return lambdas.model_copy(update={"pred": 0.0})
    if stage == 3:
        return lambdas.model_copy()
    raise ValueError(f"stage must be 1, 2 or 3, got {stage}")


def _term(name: str, compute: Callable[[], Tensor]) -> Tensor:
    """Evaluate one loss term, naming it in any non-finite failure."""
    try:
        value = compute()
    except NonFiniteError as e:
        raise NonFiniteError(name, str(e)) from e
    if not np.isfinite(value.item()):
        raise NonFiniteError(name)
    return value


def total_loss(batch: Batch, model: ConceptModel, cfg: TrainConfig, lambdas: Optional[Lambdas] = None,
               concept_weights: Optional[np.ndarray] = None, freeze_drl: bool = False) -> LossBreakdown:
    """
    L = ELBO + l1 L_con + l2 L_pred + l3 L_drc + l4 |z'|_1 for the disentangled concept model.

    The CBM baseline replaces the ELBO with the plain reconstruction error and has
    no consistency or sparsity terms; the black-box baseline is cross-entropy only.
    `cfg` must already carry its ablation overrides (see TrainConfig.effective).
    """
    lambdas = lambdas if lambdas is not None else cfg.lambdas
    try:
        out = model(batch.images, batch.noise, freeze_drl=freeze_drl)
    except NonFiniteError as e:
        raise NonFiniteError("forward", str(e)) from e

    if isinstance(model, BlackBoxModel):
        pred = _term("pred", lambda: pred_loss(out.pred, batch.labels))
        return LossBreakdown(pred, {"pred": pred.item()}, {"pred": pred.item()})

    diagnostics: Dict[str, float] = {}
    if isinstance(model, CbmModel):
        base_name = "recon"
        base = _term("recon", lambda: reconstruction_loss(batch.images, out.x_hat))
    else:
        base_name = "elbo"
        recon = _term("recon", lambda: reconstruction_loss(batch.images, out.x_hat))
        kl = _term("kl", lambda: kl_divergence(out.post).mean())
        base = _term("elbo", lambda: recon + kl * cfg.beta)
        diagnostics = {"recon": recon.item(), "kl": kl.item()}

    weighted_terms = {
        "con": (lambdas.con, _term("con", lambda: concept_loss(out.concepts.annotated_logits, batch.concepts, concept_weights))),
        "pred": (lambdas.pred, _term("pred", lambda: pred_loss(out.pred, batch.labels))),
    }
    if not isinstance(model, CbmModel):
        weighted_terms["drc"] = (lambdas.drc, _term("drc", lambda: drc_loss(out.z, out.z_hat)))
        weighted_terms["sparsity"] = (lambdas.sparsity, _term("sparsity", lambda: sparsity_penalty(out.z_prime)))

    total = base
    for weight, value in weighted_terms.values():
        total = total + value * weight
    total = _term("total", lambda: total)

    terms = {base_name: base.item(), **diagnostics}
    contributions = {base_name: base.item()}
    for name, (weight, value) in weighted_terms.items():
        terms[name] = value.item()
        contributions[name] = weight * value.item()
    return LossBreakdown(total, terms, contributions)
