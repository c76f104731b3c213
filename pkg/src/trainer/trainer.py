import sys
import os
import subprocess
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from filelock import FileLock

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))
from config.settings import get_settings
from config.logging_config import setup_logger
from src import __version__
from src.aggdec.losses import class_balance_weights
from src.models.data_model import AblationKind, EpochRecord, TrainConfig
from src.models.response_model import RunManifest
from src.ndgrad.checkpoint import load_container, save_container
from src.ndgrad.errors import NonFiniteError
from src.ndgrad.optim import Adam, clip_grad_norm
from src.spritegen.dataset import SpriteDataset
from src.trainer.losses import Batch, stage_lambdas, total_loss
from src.trainer.model import ConceptModel, build_model
from src.utils.io import sha256_file, write_csv, write_json
from src.utils.seeding import STREAM_NAMES, substream
from src.xeval.metrics import concept_error, predict_split, task_accuracy

METRIC_COLUMNS = list(EpochRecord.model_fields)
TIMING_COLUMNS = ["stage", "epoch", "seconds"]


def code_version() -> str:
    """git describe of the working tree, or the package version outside a checkout."""
    try:
        result = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                                capture_output=True, text=True, timeout=5,
                                cwd=os.path.dirname(os.path.abspath(__file__)))
        if result.returncode == 0 and result.stdout.strip():
            return result.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def save_checkpoint(path: Union[str, Path], model: ConceptModel, optimizer: Optional[Adam] = None) -> Path:
    state = model.state_dict()
    if optimizer is not None:
        state.update(optimizer.state_dict("optim."))
    return save_container(path, state)


def load_checkpoint(path: Union[str, Path], model: ConceptModel) -> Dict[str, np.ndarray]:
    """Load model parameters from a checkpoint; optimizer sections are returned untouched."""
    state = load_container(path)
    model.load_state_dict({k: v for k, v in state.items() if not k.startswith("optim.")})
    return {k: v for k, v in state.items() if k.startswith("optim.")}


class Trainer:
    """
    Staged optimization of one model on one dataset.

    Stage 1 fits the representation alone, stage 2 fits the concept mappings
    with the representation frozen, stage 3 trains everything end to end. All
    randomness comes from named substreams of cfg.seed: parameter init from
    "init", batch order from "shuffle" and reparameterization noise from
    "noise", so ablations that share a seed see the same data order.
    """

    def __init__(self, cfg: TrainConfig, dataset: SpriteDataset, run_dir: Union[str, Path],
                 model: Optional[ConceptModel] = None):
        self.settings = get_settings()
        self.logger = setup_logger("Trainer", self.settings.log.subdirectories["training"])
        self.config = cfg
        self.cfg = cfg.effective()
        self.dataset = dataset
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.model = model or build_model(cfg.ablation, cfg.model, substream(cfg.seed, "init"))
        self.shuffle_rng = substream(cfg.seed, "shuffle")
        self.noise_rng = substream(cfg.seed, "noise")
        self.concept_weights = class_balance_weights(dataset.train.concepts)
        self.records: List[EpochRecord] = []
        self.timings: List[Dict[str, float]] = []
        self.logger.info(
            f"Trainer ready: ablation={self.cfg.ablation.value}, beta={self.cfg.beta}, "
            f"lambdas={self.cfg.lambdas.model_dump()}, train={len(dataset.train)}, test={len(dataset.test)}"
        )

    # paths

    def checkpoint_path(self, stage: int, last_good: bool = False) -> Path:
        return self.run_dir / (f"stage{stage}.last_good.cldr" if last_good else f"stage{stage}.cldr")

    @property
    def metrics_path(self) -> Path:
        return self.run_dir / self.settings.data.metrics_csv

    @property
    def timings_path(self) -> Path:
        return self.run_dir / self.settings.data.timings_csv

    # manifest

    def write_run_manifest(self, dataset_dir: Union[str, Path]) -> Path:
        dataset_dir = Path(dataset_dir)
        manifest_file = dataset_dir / self.settings.data.manifest_file
        manifest = RunManifest(
            version=code_version(),
            seed=self.config.seed,
            streams=list(STREAM_NAMES),
            config=self.config,
            effective_lambdas=self.cfg.lambdas,
            effective_beta=self.cfg.beta,
            dataset_dir=str(dataset_dir),
            dataset_manifest_sha256=sha256_file(manifest_file) if manifest_file.exists() else "",
            created_at=datetime.now(timezone.utc).isoformat(),
            outputs={
                "metrics": str(self.metrics_path),
                "timings": str(self.timings_path),
                **{f"stage{s}": str(self.checkpoint_path(s)) for s in (1, 2, 3)},
            },
        )
        path = self.run_dir / self.settings.data.run_manifest_file
        write_json(path, manifest.model_dump(mode="json"))
        self.logger.info(f"Run manifest written to {path}")
        return path

    # training

    def _apply_stage_modes(self, stage: int) -> None:
        self.model.train()
        for name in self.model.frozen_groups(stage):
            getattr(self.model, name).eval()

    def _iterate_batches(self) -> List[np.ndarray]:
        order = self.shuffle_rng.permutation(len(self.dataset.train))
        size = self.cfg.batch_size
        return [order[i:i + size] for i in range(0, len(order), size)]

    def _make_batch(self, indices: np.ndarray) -> Batch:
        train = self.dataset.train
        noise = self.noise_rng.standard_normal((len(indices), self.cfg.model.latent_dim))
        return Batch(train.images[indices], train.concepts[indices], train.labels[indices], noise)

    def evaluate(self) -> Tuple[float, Optional[float]]:
        """Task accuracy and concept RMSE on the test split, in inference mode."""
        test = self.dataset.test
        predictions = predict_split(self.model, test.images)
        accuracy = task_accuracy(predictions.predicted, test.labels)
        error = None
        if predictions.concept_scores is not None:
            error = concept_error(predictions.concept_scores, test.concepts, "rmse")
        return accuracy, error

    def train_stage(self, stage: int) -> List[EpochRecord]:
        """Run one stage; writes stage{n}.cldr at the end, or stage{n}.last_good.cldr before re-raising a non-finite failure."""
        epochs = self.cfg.stage_epochs[stage - 1]
        groups = self.model.stage_groups(stage)
        lambdas = stage_lambdas(self.cfg.lambdas, stage)
        freeze_drl = "drl" in self.model.frozen_groups(stage)
        trainable = self.model.group_parameters(groups)
        optimizer = Adam(trainable, lr=self.cfg.lr)
        params = [p for _, p in trainable]
        self.logger.info(f"Stage {stage}: {epochs} epochs over groups {groups}, lambdas={lambdas.model_dump()}")

        stage_records = []
        for epoch in range(1, epochs + 1):
            started = time.perf_counter()
            self._apply_stage_modes(stage)
            sums: Dict[str, float] = {}
            seen = 0
            for indices in self._iterate_batches():
                batch = self._make_batch(indices)
                self.model.zero_grad()
                try:
                    breakdown = total_loss(batch, self.model, self.cfg, lambdas, self.concept_weights, freeze_drl)
                    if breakdown.total.requires_grad:
                        breakdown.total.backward()
                        clip_grad_norm(params, self.cfg.grad_clip)
                        optimizer.step()
                except NonFiniteError as e:
                    path = save_checkpoint(self.checkpoint_path(stage, last_good=True), self.model, optimizer)
                    self.logger.error(f"Stage {stage} epoch {epoch}: non-finite value in '{e.op}'; last good parameters saved to {path}")
                    raise
                n = len(batch)
                seen += n
                sums["total"] = sums.get("total", 0.0) + breakdown.total.item() * n
                for name, value in breakdown.terms.items():
                    sums[name] = sums.get(name, 0.0) + value * n

            accuracy, error = self.evaluate()
            means = {name: value / max(seen, 1) for name, value in sums.items()}
            record = EpochRecord(stage=stage, epoch=epoch, task_accuracy=accuracy, concept_error=error, **means)
            elapsed = time.perf_counter() - started
            self.records.append(record)
            stage_records.append(record)
            self.timings.append({"stage": stage, "epoch": epoch, "seconds": elapsed})
            self._write_metrics()
            terms = ", ".join(f"{k}={v:.5f}" for k, v in means.items())
            self.logger.info(f"Stage {stage} epoch {epoch}/{epochs}: {terms}, acc={accuracy:.4f}, concept_rmse={error}, {elapsed:.1f}s")

        path = save_checkpoint(self.checkpoint_path(stage), self.model, optimizer)
        self.logger.info(f"Stage {stage} checkpoint written to {path}")
        return stage_records

    def _write_metrics(self) -> None:
        write_csv(self.metrics_path, [r.model_dump() for r in self.records], columns=METRIC_COLUMNS)
        write_csv(self.timings_path, self.timings, columns=TIMING_COLUMNS)

    def fit(self, dataset_dir: Optional[Union[str, Path]] = None) -> List[EpochRecord]:
        """Write the run manifest, then run stages 1-3."""
        with FileLock(str(self.run_dir / ".run.lock"), timeout=1):
            if dataset_dir is not None:
                self.write_run_manifest(dataset_dir)
            self._write_metrics()
            for stage in (1, 2, 3):
                self.train_stage(stage)
        return self.records


def run_ablation(kind: Union[str, AblationKind], dataset: SpriteDataset, cfg: TrainConfig,
                 run_dir: Union[str, Path], dataset_dir: Optional[Union[str, Path]] = None) -> Tuple[ConceptModel, Dict[str, Optional[float]]]:
    """Train one ablation end to end and report its final test metrics."""
    try:
        kind = AblationKind(kind)
    except ValueError:
        raise ValueError(f"Unknown ablation kind '{kind}'; expected one of {[k.value for k in AblationKind]}") from None
    trainer = Trainer(cfg.model_copy(update={"ablation": kind}), dataset, run_dir)
    trainer.fit(dataset_dir)
    accuracy, error = trainer.evaluate()
    return trainer.model, {"task_accuracy": accuracy, "concept_error": error}
