from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from src.models.data_model import Lambdas, TrainConfig


class RunManifest(BaseModel):
    """Everything needed to re-run a training run bit-identically."""
    version: str = Field(description="git-describe style version of the code that produced the run")
    seed: int
    streams: List[str] = Field(description="Named random substreams derived from the seed")
    config: TrainConfig
    effective_lambdas: Lambdas
    effective_beta: float
    dataset_dir: str
    dataset_manifest_sha256: str
    created_at: str
    outputs: Dict[str, str] = Field(default_factory=dict)


class EvalSummary(BaseModel):
    """The headline numbers written to summary.json."""
    task_accuracy: float
    concept_error: Optional[float] = None
    mean_iou_top2: Optional[float] = None
    mean_iou_top5: Optional[float] = None


class EvalDetails(BaseModel):
    """Secondary numbers written next to the summary."""
    ablation: str
    split: str
    sample_count: int
    concept_error_zero_one: Optional[float] = None
    mean_iou_top2_correct: Optional[float] = None
    mean_iou_top5_correct: Optional[float] = None
    attribution_normalization: str = "max_abs"
    ig_steps: int
    saliency_threshold: float
