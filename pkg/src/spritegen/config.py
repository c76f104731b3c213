from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import yaml
from pydantic import BaseModel, Field, field_validator

from config.settings import get_settings
from src.models.data_model import ConceptDef


class Geometry(BaseModel):
    allowed_sizes: List[int]
    base_side_fraction: float = Field(gt=0.0, le=0.5)
    ellipse_aspect: float = Field(gt=0.0, le=1.0)
    heart_extent: float = Field(gt=0.0)


class FactorRanges(BaseModel):
    shape: List[str]
    scale: Tuple[float, float]
    orientation: Tuple[float, float]
    x_pos: Tuple[float, float]
    y_pos: Tuple[float, float]


class DatasetDefaults(BaseModel):
    min_count: int
    train_fraction: float = Field(gt=0.0, lt=1.0)
    balance_window: Tuple[float, float]
    draws_per_sample: int = Field(gt=0)
    mask_note: str

    @field_validator("balance_window")
    @classmethod
    def check_window(cls, value):
        lo, hi = value
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"balance_window must satisfy 0 <= lo <= hi <= 1, got {value}")
        return value


class SpriteConfig(BaseModel):
    geometry: Geometry
    factor_ranges: FactorRanges
    concept_defs: List[ConceptDef]
    task_presets: Dict[str, str]
    dataset: DatasetDefaults

    def concept_names(self) -> List[str]:
        return [c.name for c in self.concept_defs]


@lru_cache()
def load_sprite_config(path: Optional[str] = None) -> SpriteConfig:
    """Read and validate the sprite YAML; cached per path."""
    path = Path(path or get_settings().data.sprite_config_yaml)
    if not path.exists():
        raise FileNotFoundError(f"Sprite config not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f)
    return SpriteConfig.model_validate(raw)
