from pydantic import BaseModel, Field
from dotenv import load_dotenv
import os
from functools import lru_cache
from pathlib import Path
from config.logging_config import setup_logger, LogSettings, OUTPUT_DIR_ENV

load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parent.parent


class DataSettings(BaseModel):
    """Data file configuration settings."""
    output_dir: str = Field(default="outputs", description="Root for datasets, runs and reports unless a command names its own path")
    sprite_config_yaml: str = Field(default=str(PROJECT_ROOT / "config" / "sprite_config.yaml"), description="Renderer geometry, concept definitions and task presets")
    dataset_file: str = Field(default="dataset.cldr", description="Image/factor/label container inside a dataset directory")
    mask_file: str = Field(default="masks.cldm", description="Packed ground-truth mask container inside a dataset directory")
    manifest_file: str = Field(default="manifest.json", description="Dataset manifest inside a dataset directory")
    run_manifest_file: str = Field(default="run_manifest.json", description="Run manifest inside a run directory")
    metrics_csv: str = Field(default="metrics.csv", description="Per-epoch metrics inside a run directory")
    timings_csv: str = Field(default="timings.csv", description="Per-epoch wall time inside a run directory")


class EvalSettings(BaseModel):
    """Evaluation defaults."""
    ig_steps: int = Field(default=128, ge=8, description="Riemann-midpoint points for Integrated Gradients")
    saliency_threshold: float = Field(default=150 / 255, description="Binarization threshold on normalized saliency heat")
    traversal_lo: float = Field(default=-2.0)
    traversal_hi: float = Field(default=2.0)
    traversal_steps: int = Field(default=8, ge=2)
    iou_samples: int = Field(default=100, ge=1, description="Test samples used for saliency IoU")
    intervention_fractions: list[float] = Field(default=[0.0, 0.25, 0.5, 0.75, 1.0])


class Settings(BaseModel):
    """Main application configuration settings."""
    log: LogSettings
    data: DataSettings
    evaluation: EvalSettings


@lru_cache()
def get_settings() -> Settings:
    """
    Load and cache application settings from the environment.
    Only the output directory can be overridden, through DICON_OUTPUT_DIR.
    """
    logger = setup_logger("Settings", "cli")
    output_dir = os.getenv(OUTPUT_DIR_ENV, "outputs")

    settings = Settings(
        log=LogSettings(directory=str(Path(output_dir) / "logs")),
        data=DataSettings(output_dir=output_dir),
        evaluation=EvalSettings(),
    )

    logger.debug(f"Settings initialized with output_dir={output_dir}")
    return settings
