import sys
import os
import argparse
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..')))
from config.settings import get_settings
from config.logging_config import setup_logger
from src.models.data_model import AblationKind, TrainConfig
from src.ndgrad import ops
from src.ndgrad.tensor import Tensor, no_grad
from src.spritegen.annotations import TaskDef
from src.spritegen.config import load_sprite_config
from src.spritegen.dataset import SpriteDatasetGenerator, save_dataset
from src.trainer.trainer import run_ablation
from src.utils.io import write_csv
from src.xeval.attribution import AttributionMap, concept_attributions, frozen_parameters
from src.xeval.evaluator import Evaluator

ABLATIONS = [AblationKind.none, AblationKind.no_drc, AblationKind.cbm, AblationKind.vanilla_vae, AblationKind.blackbox]


class AcceptanceSweep:
    """Trains every ablation over several seeds on one desk-scale dataset and checks the headline targets."""

    def __init__(self, out_dir: Path, seeds: List[int], count: int, task: str, workers: int):
        self.settings = get_settings()
        self.logger = setup_logger("AcceptanceSweep", self.settings.log.subdirectories["evaluation"])
        self.out_dir = Path(out_dir)
        self.seeds = seeds
        self.count = count
        self.task = task
        self.workers = workers

    def completeness_rate(self, model, dataset, concept_names, samples: int = 100, tolerance: float = 0.01) -> float:
        """Share of test samples whose IG sums match F(z) - F(0) within the tolerance, for every concept."""
        images = dataset.test.images[:samples]
        with no_grad():
            latents = model.latent_mean(Tensor(images)).data
            at_z = ops.sigmoid(model.concept_logits_from_latent(Tensor(latents))).data
            at_zero = ops.sigmoid(model.concept_logits_from_latent(Tensor(np.zeros_like(latents)))).data
        passed = 0
        with frozen_parameters(model):
            for i, z in enumerate(latents):
                raw = concept_attributions(model, z, len(concept_names), steps=128)
                gaps = [AttributionMap(name, raw[c]).completeness_gap(at_z[i, c] - at_zero[i, c])
                        for c, name in enumerate(concept_names)]
                passed += int(max(gaps) < tolerance)
        return passed / len(latents)

    def run(self) -> pd.DataFrame:
        config = load_sprite_config()
        data_dir = self.out_dir / "data"
        dataset = SpriteDatasetGenerator(config, workers=self.workers).generate(
            self.count, 32, TaskDef.parse(self.task, config.task_presets), seed=0)
        save_dataset(dataset, data_dir)
        concept_names = config.concept_names()

        rows: List[Dict] = []
        for seed in self.seeds:
            for kind in ABLATIONS:
                run_dir = self.out_dir / "runs" / f"{kind.value}-seed{seed}"
                cfg = TrainConfig(seed=seed)
                self.logger.info(f"Sweep: training {kind.value} with seed {seed}")
                model, _ = run_ablation(kind, dataset, cfg, run_dir, data_dir)
                evaluator = Evaluator(model, dataset.test, concept_names, run_dir / "eval", workers=self.workers)
                summary = evaluator.run()
                row = {"ablation": kind.value, "seed": seed, **summary.model_dump()}
                if model.has_concepts:
                    curve = {r.fraction_intervened: r.corrected_rate
                             for r in evaluator.intervention([0.0, 0.25, 0.5, 0.75, 1.0], seed)}
                    row["corrected_025"] = curve.get(0.25)
                    row["corrected_100"] = curve.get(1.0)
                if kind == AblationKind.none:
                    row["ig_completeness_rate"] = self.completeness_rate(model, dataset, concept_names)
                rows.append(row)
                print(f"{kind.value} seed {seed}: {row}")

        table = pd.DataFrame(rows)
        write_csv(self.out_dir / "sweep.csv", table)
        return table

    def check(self, table: pd.DataFrame) -> Dict[str, bool]:
        median = table.groupby("ablation").median(numeric_only=True)
        full, cbm, no_drc = median.loc["none"], median.loc["cbm"], median.loc["no_drc"]
        checks = {
            "accuracy >= 0.85": full["task_accuracy"] >= 0.85,
            "concept rmse <= 0.15": full["concept_error"] <= 0.15,
            "no_drc rmse >= full rmse": no_drc["concept_error"] >= full["concept_error"],
            "cbm accuracy within 0.05": abs(cbm["task_accuracy"] - full["task_accuracy"]) <= 0.05,
            "top2 iou beats cbm by 0.10": full["mean_iou_top2"] - cbm["mean_iou_top2"] >= 0.10,
            "top2 iou >= top5 iou - 0.05": full["mean_iou_top2"] >= full["mean_iou_top5"] - 0.05,
            "intervention p=1 >= 0.5": full["corrected_100"] >= 0.5,
            "intervention p=1 >= p=0.25": full["corrected_100"] >= full["corrected_025"],
            "ig completeness >= 0.95": full["ig_completeness_rate"] >= 0.95,
        }
        for name, passed in checks.items():
            self.logger.info(f"{name}: {'PASS' if passed else 'FAIL'}")
            print(f"{'PASS' if passed else 'FAIL'}  {name}")
        return checks


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Desk-scale acceptance sweep over seeds and ablations.")
    parser.add_argument("--out", default="outputs/acceptance")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--count", type=int, default=10000)
    parser.add_argument("--task", default="preset:square_right")
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    sweep = AcceptanceSweep(Path(args.out), [int(s) for s in args.seeds.split(",")], args.count, args.task, args.workers)
    results = sweep.check(sweep.run())
    sys.exit(0 if all(results.values()) else 1)
