"""
End-to-end models trained by the Trainer.

All three share one interface so the trainer and the evaluation battery never
branch on the model kind: a latent bottleneck read from images, optional
concept logits computed from that bottleneck, and a task prediction.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from src.aggdec.modules import Aggregator, ConceptVector, Decomposer
from src.drl.vae import BetaVAE, Encoder, LatentPosterior, reparameterize
from src.models.data_model import AblationKind, ModelConfig
from src.ndgrad.nn import Linear, Module
from src.ndgrad.tensor import Tensor, as_tensor, no_grad
from src.taskhead.head import TaskHead, TaskPrediction


@dataclass
class ForwardOutputs:
    z: Tensor
    pred: TaskPrediction
    x_hat: Optional[Tensor] = None
    post: Optional[LatentPosterior] = None
    z_prime: Optional[Tensor] = None
    concepts: Optional[ConceptVector] = None
    z_hat: Optional[Tensor] = None


class ConceptModel(Module):
    """Common surface of the trainable models."""

    kind: AblationKind = AblationKind.none
    has_concepts = True
    has_decoder = True

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg

    def stage_groups(self, stage: int) -> List[str]:
        raise NotImplementedError

    def frozen_groups(self, stage: int) -> List[str]:
        return [name for name, _ in self.children() if name not in self.stage_groups(stage)]

    def group_parameters(self, groups: List[str]) -> List[tuple]:
        named = []
        for name, child in self.children():
            if name in groups:
                named.extend(child.named_parameters(f"{name}."))
        return named

    def latent_mean(self, x) -> Tensor:
        raise NotImplementedError

    def concept_logits_from_latent(self, z: Tensor) -> Tensor:
        raise NotImplementedError(f"{type(self).__name__} has no concept layer")

    def predict_from_scores(self, scores: Tensor) -> TaskPrediction:
        raise NotImplementedError(f"{type(self).__name__} does not predict from concepts")

    def decode(self, z: Tensor) -> Tensor:
        raise NotImplementedError(f"{type(self).__name__} has no decoder")

    def infer(self, x) -> ForwardOutputs:
        """Deterministic inference pass (posterior mean, no graph)."""
        raise NotImplementedError


class DisentangledConceptModel(ConceptModel):
    """beta-VAE, per-dimension aggregation into concepts, decomposition back to z, linear task head."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg)
        self.drl = BetaVAE(cfg, rng)
        self.agg = Aggregator(cfg, rng)
        self.dec = Decomposer(cfg, rng)
        self.head = TaskHead(cfg.n_annotated, cfg.n_classes, rng)

    def stage_groups(self, stage: int) -> List[str]:
        return {1: ["drl"], 2: ["agg", "dec"], 3: ["drl", "agg", "dec", "head"]}[stage]

    def forward(self, x, noise: Optional[np.ndarray] = None, freeze_drl: bool = False) -> ForwardOutputs:
        if freeze_drl:
            with no_grad():
                post = self.drl.encode(x)
                z = reparameterize(post, noise) if noise is not None else post.mu
                x_hat = self.drl.decode(z)
        else:
            post = self.drl.encode(x)
            z = reparameterize(post, noise) if noise is not None else post.mu
            x_hat = self.drl.decode(z)
        z_prime, concepts = self.agg(z)
        _, z_hat = self.dec(concepts.scores)
        pred = self.head(concepts.scores)
        return ForwardOutputs(z=z, pred=pred, x_hat=x_hat, post=post, z_prime=z_prime, concepts=concepts, z_hat=z_hat)

    def latent_mean(self, x) -> Tensor:
        return self.drl.encode(x).mu

    def concept_logits_from_latent(self, z: Tensor) -> Tensor:
        return self.agg(z)[1].logits

    def predict_from_scores(self, scores: Tensor) -> TaskPrediction:
        return self.head(scores)

    def decode(self, z: Tensor) -> Tensor:
        return self.drl.decode(z)

    def infer(self, x) -> ForwardOutputs:
        with no_grad():
            return self.forward(x)


class CbmModel(ConceptModel):
    """Deterministic autoencoder whose bottleneck feeds one linear concept layer and the linear head."""

    kind = AblationKind.cbm

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg)
        self.drl = BetaVAE(cfg, rng, variational=False)
        self.concept = Linear(cfg.latent_dim, cfg.n_annotated, rng)
        self.head = TaskHead(cfg.n_annotated, cfg.n_classes, rng)

    def stage_groups(self, stage: int) -> List[str]:
        return {1: ["drl"], 2: ["concept"], 3: ["drl", "concept", "head"]}[stage]

    def forward(self, x, noise: Optional[np.ndarray] = None, freeze_drl: bool = False) -> ForwardOutputs:
        if freeze_drl:
            with no_grad():
                z = self.drl.encode(x).mu
                x_hat = self.drl.decode(z)
        else:
            z = self.drl.encode(x).mu
            x_hat = self.drl.decode(z)
        concepts = ConceptVector(self.concept(z), self.cfg.n_annotated)
        return ForwardOutputs(z=z, pred=self.head(concepts.scores), x_hat=x_hat, concepts=concepts)

    def latent_mean(self, x) -> Tensor:
        return self.drl.encode(x).mu

    def concept_logits_from_latent(self, z: Tensor) -> Tensor:
        return self.concept(as_tensor(z))

    def predict_from_scores(self, scores: Tensor) -> TaskPrediction:
        return self.head(scores)

    def decode(self, z: Tensor) -> Tensor:
        return self.drl.decode(z)

    def infer(self, x) -> ForwardOutputs:
        with no_grad():
            return self.forward(x)


class BlackBoxModel(ConceptModel):
    """Encoder mean followed by one fully connected classifier; no concepts, no decoder."""

    kind = AblationKind.blackbox
    has_concepts = False
    has_decoder = False

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg)
        self.encoder = Encoder(cfg, rng, variational=False)
        self.classifier = Linear(cfg.latent_dim, cfg.n_classes, rng)

    def stage_groups(self, stage: int) -> List[str]:
        if stage not in (1, 2, 3):
            raise KeyError(stage)
        return ["encoder", "classifier"]

    def forward(self, x, noise: Optional[np.ndarray] = None, freeze_drl: bool = False) -> ForwardOutputs:
        z = self.encoder(x).mu
        return ForwardOutputs(z=z, pred=TaskPrediction(self.classifier(z)))

    def latent_mean(self, x) -> Tensor:
        return self.encoder(x).mu

    def infer(self, x) -> ForwardOutputs:
        with no_grad():
            return self.forward(x)


MODEL_KINDS: Dict[AblationKind, type] = {
    AblationKind.none: DisentangledConceptModel,
    AblationKind.no_drc: DisentangledConceptModel,
    AblationKind.vanilla_vae: DisentangledConceptModel,
    AblationKind.cbm: CbmModel,
    AblationKind.blackbox: BlackBoxModel,
}


def build_model(kind: AblationKind, cfg: ModelConfig, rng: np.random.Generator) -> ConceptModel:
    try:
        kind = AblationKind(kind)
    except ValueError:
        raise ValueError(f"Unknown ablation kind '{kind}'; expected one of {[k.value for k in AblationKind]}") from None
    return MODEL_KINDS[kind](cfg, rng)
