import sys
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))
from config.settings import get_settings
from config.logging_config import setup_logger
from src.models.data_model import InterventionResult
from src.models.response_model import EvalDetails, EvalSummary
from src.ndgrad.tensor import Tensor, no_grad
from src.spritegen.dataset import SplitData
from src.utils.io import write_csv, write_json, write_pgm
from src.xeval.attribution import AttributionMap, concept_attributions, frozen_parameters
from src.xeval.intervention import intervention_curve
from src.xeval.metrics import concept_error, iou, predict_split, task_accuracy
from src.xeval.saliency import SaliencyMask, concept_heat, dim_saliency_batch
from src.xeval.traversal import latent_traversal

IOU_TOPS = (2, 5)


class Evaluator:
    """Runs the evaluation battery for one trained model on one dataset split and writes its reports."""

    def __init__(self, model, split: SplitData, concept_names: Sequence[str], out_dir: Union[str, Path],
                 split_name: str = "test", workers: int = 1, ig_steps: Optional[int] = None):
        self.settings = get_settings()
        self.logger = setup_logger("Evaluator", self.settings.log.subdirectories["evaluation"])
        self.model = model
        self.model.eval()
        self.split = split
        self.split_name = split_name
        self.concept_names = list(concept_names)
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.workers = max(1, workers)
        self.ig_steps = ig_steps or self.settings.evaluation.ig_steps
        self.threshold = self.settings.evaluation.saliency_threshold

    def _concept_index(self, concept: str) -> int:
        if concept not in self.concept_names:
            raise ValueError(f"Unknown concept '{concept}'; expected one of {self.concept_names}")
        return self.concept_names.index(concept)

    def latent_means(self, indices: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.model.latent_mean(Tensor(self.split.images[indices])).data

    def attributions(self, indices: np.ndarray) -> List[List[AttributionMap]]:
        """Per sample, one AttributionMap per annotated concept; samples fan out across workers."""
        latents = self.latent_means(indices)
        n = len(self.concept_names)

        def attribute(z):
            raw = concept_attributions(self.model, z, n, steps=self.ig_steps)
            return [AttributionMap(name, raw[c]) for c, name in enumerate(self.concept_names)]

        with frozen_parameters(self.model):
            if self.workers > 1:
                with ThreadPoolExecutor(max_workers=self.workers) as pool:
                    return list(pool.map(attribute, latents))
            return [attribute(z) for z in latents]

    def saliency_heats(self, indices: np.ndarray, dims: Optional[Sequence[int]] = None) -> Dict[int, np.ndarray]:
        """Heat maps per latent dimension, each (len(indices), H, W)."""
        dims = range(self.model.cfg.latent_dim) if dims is None else dims
        images = self.split.images[indices]
        return {int(d): dim_saliency_batch(self.model, images, int(d)) for d in dims}

    # full battery

    def iou_table(self, indices: np.ndarray, attributions: List[List[AttributionMap]],
                  correct: np.ndarray) -> pd.DataFrame:
        needed = sorted({int(d) for per_sample in attributions for amap in per_sample
                         for d in amap.top_k(min(max(IOU_TOPS), amap.raw.size))})
        heats = self.saliency_heats(indices, needed)
        rows = []
        for i, sample in enumerate(indices):
            truth = self.split.masks[sample]
            for c, amap in enumerate(attributions[i]):
                row = {"sample": int(sample), "concept": amap.concept, "concept_correct": bool(correct[i, c])}
                for top in IOU_TOPS:
                    dims = amap.top_k(min(top, amap.raw.size))
                    row[f"iou_top{top}"] = float(np.mean([iou(heats[int(d)][i] > self.threshold, truth) for d in dims]))
                rows.append(row)
        return pd.DataFrame(rows, columns=["sample", "concept", "concept_correct"] + [f"iou_top{t}" for t in IOU_TOPS])

    def run(self) -> EvalSummary:
        predictions = predict_split(self.model, self.split.images)
        accuracy = task_accuracy(predictions.predicted, self.split.labels)
        summary = EvalSummary(task_accuracy=accuracy)
        details = EvalDetails(ablation=self.model.kind.value, split=self.split_name, sample_count=len(self.split),
                              ig_steps=self.ig_steps, saliency_threshold=self.threshold)

        if self.model.has_concepts and predictions.concept_scores is not None:
            scores = predictions.concept_scores
            summary.concept_error = concept_error(scores, self.split.concepts, "rmse")
            details.concept_error_zero_one = concept_error(scores, self.split.concepts, "zero_one")

            indices = np.arange(min(self.settings.evaluation.iou_samples, len(self.split)))
            attributions = self.attributions(indices)
            self._write_attributions(indices, attributions)
            correct = (scores[indices] >= 0.5) == (self.split.concepts[indices] >= 0.5)
            table = self.iou_table(indices, attributions, correct)
            write_csv(self.out_dir / "iou.csv", table)
            summary.mean_iou_top2 = float(table["iou_top2"].mean())
            summary.mean_iou_top5 = float(table["iou_top5"].mean())
            restricted = table[table["concept_correct"]]
            if len(restricted):
                details.mean_iou_top2_correct = float(restricted["iou_top2"].mean())
                details.mean_iou_top5_correct = float(restricted["iou_top5"].mean())
            self.model.head.export_weights(self.out_dir / "head_weights.csv", self.concept_names)

        write_json(self.out_dir / "summary.json", summary.model_dump(mode="json"))
        write_json(self.out_dir / "details.json", details.model_dump(mode="json"))
        self.logger.info(f"Evaluation on {self.split_name}: {summary.model_dump()}")
        return summary

    def _write_attributions(self, indices: np.ndarray, attributions: List[List[AttributionMap]]) -> Path:
        rows = []
        for sample, per_sample in zip(indices, attributions):
            for amap in per_sample:
                ranks = np.empty(amap.raw.size, dtype=np.int64)
                ranks[amap.top_k(amap.raw.size)] = np.arange(amap.raw.size)
                for dim in range(amap.raw.size):
                    rows.append({"sample": int(sample), "concept": amap.concept, "dim": dim,
                                 "ig": float(amap.raw[dim]), "score": float(amap.dim_scores[dim]), "rank": int(ranks[dim])})
        return write_csv(self.out_dir / "attributions.csv", rows,
                         columns=["sample", "concept", "dim", "ig", "score", "rank"])

    # single commands

    def attribute(self, concept: str, top: int, sample_indices: Sequence[int]) -> pd.DataFrame:
        """Top dimensions of one concept per sample: CSV rows, one saliency PGM per dimension and one concept heat PGM."""
        c = self._concept_index(concept)
        indices = np.asarray(list(sample_indices), dtype=np.int64)
        if indices.size == 0 or indices.min() < 0 or indices.max() >= len(self.split):
            raise ValueError(f"sample indices must lie in [0, {len(self.split)})")
        attributions = self.attributions(indices)
        rows = []
        for i, sample in enumerate(indices):
            amap = attributions[i][c]
            dims = amap.top_k(top)
            heats = self.saliency_heats(indices[i:i + 1], dims)
            for rank, d in enumerate(dims):
                mask = SaliencyMask.from_heat(heats[int(d)][0], self.threshold)
                write_pgm(self.out_dir / f"saliency_{concept}_s{sample}_d{int(d)}.pgm", mask.heat)
                rows.append({"sample": int(sample), "concept": concept, "rank": rank, "dim": int(d),
                             "score": float(amap.dim_scores[d]), "ig": float(amap.raw[d]),
                             "iou": iou(mask.binary, self.split.masks[sample])})
            combined = concept_heat(np.stack([heats[int(d)][0] for d in dims]), amap.dim_scores[dims], np.arange(len(dims)))
            write_pgm(self.out_dir / f"concept_heat_{concept}_s{sample}.pgm", combined)
        table = pd.DataFrame(rows, columns=["sample", "concept", "rank", "dim", "score", "ig", "iou"])
        write_csv(self.out_dir / f"attribution_{concept}.csv", table)
        self.logger.info(f"Attributed '{concept}' on {len(indices)} samples, top {top} dimensions")
        return table

    def traverse(self, sample: int, dims: Sequence[int], lo: float, hi: float, steps: int) -> List[Path]:
        if not 0 <= sample < len(self.split):
            raise ValueError(f"sample index {sample} outside [0, {len(self.split)})")
        if not self.model.has_decoder:
            raise ValueError(f"{self.model.kind.value} model has no decoder to traverse")
        z = self.latent_means(np.array([sample]))[0]
        paths = []
        for dim in dims:
            frames = latent_traversal(self.model, z, int(dim), lo, hi, steps)
            for step, frame in enumerate(frames):
                paths.append(write_pgm(self.out_dir / f"traversal_s{sample}_d{int(dim)}_{step:02d}.pgm", frame))
        self.logger.info(f"Traversed {len(dims)} dimensions of sample {sample} over [{lo}, {hi}] in {steps} steps")
        return paths

    def intervention(self, fractions: Sequence[float], seed: int, order: str = "deviant") -> List[InterventionResult]:
        if not self.model.has_concepts:
            raise ValueError(f"{self.model.kind.value} model has no concepts to intervene on")
        results = intervention_curve(self.model, self.split.images, self.split.concepts, self.split.labels,
                                     fractions, seed=seed, order=order)
        columns = list(InterventionResult.model_fields)
        write_csv(self.out_dir / "intervention.csv", [r.model_dump() for r in results], columns=columns)
        return results
