import os
import sys
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..')))

import argparse
from pathlib import Path

from config.settings import get_settings
from config.logging_config import setup_logger
from src.spritegen.annotations import TaskDef
from src.spritegen.config import load_sprite_config
from src.spritegen.dataset import SpriteDatasetGenerator, save_dataset


def add_generate_parser(subparsers) -> None:
    parser = subparsers.add_parser("generate", help="Render a label-balanced sprite dataset")
    parser.add_argument("--count", type=int, default=10000, help="Total samples across both splits")
    parser.add_argument("--size", type=int, default=32, help="Image side in pixels")
    parser.add_argument("--task", default="preset:square_right",
                        help="Two criteria such as 'shape=square,x>0.5', or 'preset:<name>'")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", default=None, help="Dataset directory (default <output_dir>/data)")
    parser.set_defaults(handler=cmd_generate)


def cmd_generate(args: argparse.Namespace) -> int:
    settings = get_settings()
    logger = setup_logger("GenerateCommand", settings.log.subdirectories["cli"])
    config = load_sprite_config()
    task = TaskDef.parse(args.task, config.task_presets)
    out_dir = Path(args.out or Path(settings.data.output_dir) / "data")

    logger.info(f"Generating {args.count} samples of task '{task.describe()}' at {args.size}px, seed {args.seed}")
    dataset = SpriteDatasetGenerator(config, workers=args.workers).generate(args.count, args.size, task, args.seed)
    manifest_path = save_dataset(dataset, out_dir)
    print(f"Dataset written to {out_dir} (train {len(dataset.train)}, test {len(dataset.test)}, "
          f"positive fraction {dataset.manifest.positive_fraction:.3f})")
    logger.info(f"Dataset manifest at {manifest_path}")
    return 0
