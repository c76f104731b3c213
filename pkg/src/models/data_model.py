from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Shape(str, Enum):
    square = "square"
    ellipse = "ellipse"
    heart = "heart"


class CriterionKind(str, Enum):
    equals = "equals"
    greater = "greater"


class AblationKind(str, Enum):
    none = "none"
    cbm = "cbm"
    no_drc = "no_drc"
    vanilla_vae = "vanilla_vae"
    blackbox = "blackbox"


FACTOR_NAMES = ("shape", "scale", "orientation", "x_pos", "y_pos")


class Criterion(BaseModel):
    """A test on one generative factor: exact categorical value or strict threshold."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    factor: str
    kind: CriterionKind
    value: Union[float, str]

    @model_validator(mode="after")
    def check_factor(self):
        if self.factor not in FACTOR_NAMES:
            raise ValueError(f"Unknown factor '{self.factor}'; expected one of {FACTOR_NAMES}")
        if self.factor == "shape":
            if self.kind != CriterionKind.equals or self.value not in [s.value for s in Shape]:
                raise ValueError(f"shape criteria must be equality on {[s.value for s in Shape]}, got {self.kind.value} {self.value}")
        elif self.kind != CriterionKind.greater or isinstance(self.value, str):
            raise ValueError(f"{self.factor} is continuous and needs a numeric '>' threshold")
        return self

    def describe(self) -> str:
        return f"{self.factor}={self.value}" if self.kind == CriterionKind.equals else f"{self.factor}>{self.value}"


class ConceptDef(Criterion):
    """A named annotated concept; position in the concept list fixes its index."""
    name: str


class ModelConfig(BaseModel):
    """Architecture sizes shared by the disentangled concept model and its ablations."""
    model_config = ConfigDict(extra="forbid")

    image_size: int = Field(default=32, description="Square input side; must be divisible by 2**len(filters)")
    latent_dim: int = Field(default=16, gt=0, description="k, the number of disentangled factors")
    filters: List[int] = Field(default=[16, 32, 32], min_length=1)
    n_annotated: int = Field(default=6, gt=0)
    n_total: int = Field(default=16, gt=0)
    n_classes: int = Field(default=2, ge=2)
    hidden: int = Field(default=32, ge=2, description="Hidden width of every per-dimension network")
    slope: float = Field(default=0.01, ge=0.0, lt=1.0, description="LeakyReLU negative slope")

    @model_validator(mode="after")
    def check_sizes(self):
        if self.n_annotated > self.n_total:
            raise ValueError(f"n_annotated ({self.n_annotated}) exceeds n_total ({self.n_total})")
        reduction = 2 ** len(self.filters)
        if self.image_size % reduction or self.image_size < reduction:
            raise ValueError(f"image_size {self.image_size} is not divisible by {reduction}")
        return self


class Lambdas(BaseModel):
    """Weights of the concept, prediction, consistency and sparsity terms."""
    model_config = ConfigDict(extra="forbid")

    con: float = Field(default=0.5, ge=0.0)
    pred: float = Field(default=0.2, ge=0.0)
    drc: float = Field(default=1.0, ge=0.0)
    sparsity: float = Field(default=0.1, ge=0.0)


class TrainConfig(BaseModel):
    """
    Full experiment configuration.
    Unknown keys are rejected so a typo in a JSON config never falls back to a default.
    """
    model_config = ConfigDict(extra="forbid")

    lambdas: Lambdas = Field(default_factory=Lambdas)
    beta: float = Field(default=0.05, ge=0.0)
    lr: float = Field(default=5e-3, gt=0.0)
    batch_size: int = Field(default=64, gt=0)
    stage_epochs: Tuple[int, int, int] = Field(default=(20, 10, 10))
    seed: int = Field(default=0, ge=0)
    ablation: AblationKind = AblationKind.none
    grad_clip: float = Field(default=5.0, gt=0.0)
    model: ModelConfig = Field(default_factory=ModelConfig)

    @field_validator("stage_epochs")
    @classmethod
    def check_epochs(cls, value):
        if any(e < 0 for e in value):
            raise ValueError(f"stage epochs must be non-negative, got {value}")
        return value

    def effective(self) -> "TrainConfig":
        """Copy with the ablation's overrides applied to the loss weights."""
        if self.ablation == AblationKind.no_drc:
            return self.model_copy(update={"lambdas": self.lambdas.model_copy(update={"drc": 0.0})})
        if self.ablation == AblationKind.vanilla_vae:
            return self.model_copy(update={"beta": 1.0})
        return self.model_copy()


class EpochRecord(BaseModel):
    """One row of the metrics CSV. Terms that a mode does not compute stay None."""
    stage: int
    epoch: int
    total: float
    elbo: Optional[float] = None
    recon: Optional[float] = None
    kl: Optional[float] = None
    con: Optional[float] = None
    pred: Optional[float] = None
    drc: Optional[float] = None
    sparsity: Optional[float] = None
    task_accuracy: float
    concept_error: Optional[float] = None


class DatasetManifest(BaseModel):
    format_version: int = 1
    seed: int
    size: int
    count: int
    task: str
    task_def: List[Criterion]
    concept_defs: List[ConceptDef]
    factor_columns: List[str] = Field(default=list(FACTOR_NAMES))
    shape_codes: List[str] = Field(default=[s.value for s in Shape])
    train_indices: List[int]
    test_indices: List[int]
    positive_fraction: float
    mask_note: str
    files: Dict[str, str] = Field(default_factory=dict, description="sha256 per written file")


class InterventionResult(BaseModel):
    fraction_intervened: float = Field(ge=0.0, le=1.0)
    concepts_intervened: int = Field(ge=0)
    corrected_rate: float = Field(ge=0.0, le=1.0)
    sample_count: int = Field(ge=0)
