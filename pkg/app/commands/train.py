import os
import sys
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..')))

import argparse
from pathlib import Path

from config.settings import get_settings
from config.logging_config import setup_logger
from src.models.data_model import AblationKind, ModelConfig, TrainConfig
from src.spritegen.dataset import SpriteDataset, load_dataset
from src.trainer.trainer import Trainer


def add_train_parser(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Run the three training stages on a generated dataset")
    parser.add_argument("--data", required=True, help="Dataset directory written by 'generate'")
    parser.add_argument("--config", default=None, help="JSON TrainConfig; unknown keys are rejected")
    parser.add_argument("--ablation", choices=[k.value for k in AblationKind], default=None)
    parser.add_argument("--seed", type=int, default=None, help="Overrides the config seed")
    parser.add_argument("--out", default=None, help="Run directory (default <output_dir>/runs/<ablation>-seed<seed>)")
    parser.set_defaults(handler=cmd_train)


def load_train_config(path: str = None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    config_path = Path(path)
    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")
    return TrainConfig.model_validate_json(config_path.read_text(encoding="utf-8"))


def align_model_config(cfg: TrainConfig, dataset: SpriteDataset) -> TrainConfig:
    """
    Take image size and annotated concept count from the dataset unless the config set them.

    Explicit values that disagree with the dataset are an error.
    """
    model = cfg.model
    observed = {"image_size": dataset.manifest.size, "n_annotated": dataset.train.concepts.shape[1]}
    update = {}
    for field, value in observed.items():
        if field in model.model_fields_set:
            if getattr(model, field) != value:
                raise ValueError(f"model.{field}={getattr(model, field)} does not match the dataset ({value})")
        else:
            update[field] = value
    if not update:
        return cfg
    merged = {**model.model_dump(), **update}
    merged["n_total"] = max(merged["n_total"], merged["n_annotated"])
    return cfg.model_copy(update={"model": ModelConfig.model_validate(merged)})


def cmd_train(args: argparse.Namespace) -> int:
    settings = get_settings()
    logger = setup_logger("TrainCommand", settings.log.subdirectories["cli"])

    dataset = load_dataset(args.data)
    cfg = align_model_config(load_train_config(args.config), dataset)
    overrides = {"ablation": args.ablation, "seed": args.seed}
    cfg = TrainConfig.model_validate({**cfg.model_dump(), **{k: v for k, v in overrides.items() if v is not None}})

    run_dir = Path(args.out or Path(settings.data.output_dir) / "runs" / f"{cfg.ablation.value}-seed{cfg.seed}")
    logger.info(f"Training {cfg.ablation.value} on {args.data} into {run_dir}")
    trainer = Trainer(cfg, dataset, run_dir)
    records = trainer.fit(args.data)

    final = records[-1] if records else None
    if final is not None:
        print(f"Run {run_dir}: stage {final.stage} epoch {final.epoch}, task accuracy {final.task_accuracy:.4f}, "
              f"concept error {final.concept_error}")
    else:
        print(f"Run {run_dir}: no epochs scheduled")
    return 0
