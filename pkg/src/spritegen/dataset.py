import sys
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from filelock import FileLock

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))
from config.settings import get_settings
from config.logging_config import setup_logger
from src.models.data_model import DatasetManifest
from src.ndgrad.checkpoint import CHECKPOINT_MAGIC, MASK_MAGIC, load_container, save_container
from src.ndgrad.errors import CheckpointFormatError
from src.spritegen.annotations import TaskDef, derive_concepts, task_label_from_factors
from src.spritegen.config import SpriteConfig, load_sprite_config
from src.spritegen.errors import FactorRangeError, UnsatisfiableTaskError
from src.spritegen.factors import FactorSpec, sample_factors
from src.spritegen.render import render_sprite
from src.utils.io import read_json, sha256_file, write_json
from src.utils.seeding import substream

DATASET_FORMAT_VERSION = 1


@dataclass
class SplitData:
    """Arrays for one split, aligned on the first axis."""
    images: np.ndarray      # (n, S, S) in {0, 1}
    factors: np.ndarray     # (n, 5), shape stored as its code index
    concepts: np.ndarray    # (n, n_annotated) in {0, 1}
    labels: np.ndarray      # (n,) task class
    masks: np.ndarray       # (n, S, S) bool

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices: np.ndarray) -> "SplitData":
        return SplitData(self.images[indices], self.factors[indices], self.concepts[indices],
                         self.labels[indices], self.masks[indices])

    def factor_specs(self) -> List[FactorSpec]:
        return [FactorSpec.from_row(row) for row in self.factors]


@dataclass
class SpriteDataset:
    train: SplitData
    test: SplitData
    manifest: DatasetManifest

    def split(self, name: str) -> SplitData:
        if name not in ("train", "test"):
            raise ValueError(f"Unknown split '{name}'; expected 'train' or 'test'")
        return getattr(self, name)


class SpriteDatasetGenerator:
    """Label-balanced procedural sprite datasets with exact ground-truth masks."""

    def __init__(self, config: Optional[SpriteConfig] = None, workers: int = 1):
        self.settings = get_settings()
        self.logger = setup_logger("SpriteDatasetGenerator", self.settings.log.subdirectories["spritegen"])
        self.config = config or load_sprite_config()
        self.workers = max(1, workers)

    def draw_balanced(self, count: int, task: TaskDef, rng: np.random.Generator) -> List[FactorSpec]:
        """
        Rejection-sample factor draws until both task classes hold half the samples.

        Only the task label drives rejection, so factors outside the task stay independent.
        """
        target_pos = count // 2
        target_neg = count - target_pos
        budget = self.config.dataset.draws_per_sample * count
        accepted: List[FactorSpec] = []
        positives = negatives = draws = 0
        while positives < target_pos or negatives < target_neg:
            if draws >= budget:
                rate = positives / max(draws, 1)
                self.logger.error(f"Task '{task.describe()}' unsatisfiable: {positives}/{draws} positive draws")
                raise UnsatisfiableTaskError(
                    f"Could not balance task '{task.describe()}' within {budget} draws "
                    f"(positive rate {rate:.4f}, filled {positives}/{target_pos} positives, {negatives}/{target_neg} negatives)"
                )
            draws += 1
            factors = sample_factors(rng, self.config.factor_ranges)
            if task_label_from_factors(factors, task):
                if positives < target_pos:
                    accepted.append(factors)
                    positives += 1
            elif negatives < target_neg:
                accepted.append(factors)
                negatives += 1
        self.logger.info(f"Accepted {count} of {draws} draws for task '{task.describe()}'")
        return accepted

    def check_balance(self, labels: np.ndarray, task: TaskDef) -> float:
        """Positive fraction of the labels; raises when it falls outside the configured balance window."""
        lo, hi = self.config.dataset.balance_window
        fraction = float(np.mean(labels))
        if not lo <= fraction <= hi:
            self.logger.error(f"Task '{task.describe()}' positive fraction {fraction:.4f} outside [{lo}, {hi}]")
            raise UnsatisfiableTaskError(
                f"Positive fraction {fraction:.4f} for task '{task.describe()}' lies outside the balance window [{lo}, {hi}]"
            )
        return fraction

    def _render_all(self, specs: List[FactorSpec], size: int) -> Tuple[np.ndarray, np.ndarray]:
        def render(spec):
            return render_sprite(spec, size, self.config)

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                rendered = list(pool.map(render, specs))
        else:
            rendered = [render(spec) for spec in specs]
        images = np.stack([image for image, _ in rendered])
        masks = np.stack([mask for _, mask in rendered])
        return images, masks

    def generate(self, count: int, size: int, task: TaskDef, seed: int) -> SpriteDataset:
        dataset_cfg = self.config.dataset
        if count < dataset_cfg.min_count:
            raise ValueError(f"count must be at least {dataset_cfg.min_count}, got {count}")
        if size not in self.config.geometry.allowed_sizes:
            raise FactorRangeError(f"image size {size} not in {self.config.geometry.allowed_sizes}")

        rng = substream(seed, "data")
        specs = self.draw_balanced(count, task, rng)
        images, masks = self._render_all(specs, size)
        factors = np.stack([spec.to_row() for spec in specs])
        concepts = np.stack([derive_concepts(spec, self.config.concept_defs) for spec in specs]).astype(np.float64)
        labels = np.array([task_label_from_factors(spec, task) for spec in specs], dtype=np.int64)
        self.check_balance(labels, task)

        order = rng.permutation(count)
        n_train = int(round(dataset_cfg.train_fraction * count))
        train_idx = np.sort(order[:n_train])
        test_idx = np.sort(order[n_train:])
        everything = SplitData(images, factors, concepts, labels, masks)

        manifest = DatasetManifest(
            format_version=DATASET_FORMAT_VERSION,
            seed=seed,
            size=size,
            count=count,
            task=task.describe(),
            task_def=task.criteria,
            concept_defs=self.config.concept_defs,
            train_indices=train_idx.tolist(),
            test_indices=test_idx.tolist(),
            positive_fraction=float(labels.mean()),
            mask_note=dataset_cfg.mask_note,
        )
        self.logger.info(f"Generated {count} sprites at {size}x{size}: train {len(train_idx)}, test {len(test_idx)}")
        return SpriteDataset(everything.subset(train_idx), everything.subset(test_idx), manifest)


def generate_dataset(count: int, size: int, task: TaskDef, seed: int,
                     config: Optional[SpriteConfig] = None, workers: int = 1) -> SpriteDataset:
    return SpriteDatasetGenerator(config, workers=workers).generate(count, size, task, seed)


def regenerate_from_manifest(manifest: DatasetManifest, config: Optional[SpriteConfig] = None,
                             workers: int = 1) -> SpriteDataset:
    task = TaskDef(criterion_a=manifest.task_def[0], criterion_b=manifest.task_def[1])
    return generate_dataset(manifest.count, manifest.size, task, manifest.seed, config, workers)


def _pack_masks(masks: np.ndarray) -> np.ndarray:
    return np.packbits(masks.reshape(len(masks), -1), axis=1)


def _unpack_masks(packed: np.ndarray, size: int) -> np.ndarray:
    bits = np.unpackbits(packed.astype(np.uint8), axis=1)[:, :size * size]
    return bits.reshape(len(packed), size, size).astype(bool)


def save_dataset(dataset: SpriteDataset, out_dir: Union[str, Path]) -> Path:
    """Write the image container, the packed mask container and the manifest; returns the manifest path."""
    settings = get_settings()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_path = out_dir / settings.data.dataset_file
    mask_path = out_dir / settings.data.mask_file
    manifest_path = out_dir / settings.data.manifest_file

    tensors, masks = {}, {}
    for name in ("train", "test"):
        split = dataset.split(name)
        tensors[f"{name}.images"] = split.images
        tensors[f"{name}.factors"] = split.factors
        tensors[f"{name}.concepts"] = split.concepts
        tensors[f"{name}.labels"] = split.labels
        masks[f"{name}.masks"] = _pack_masks(split.masks)

    with FileLock(str(out_dir / ".dataset.lock"), timeout=30):
        save_container(data_path, tensors, CHECKPOINT_MAGIC)
        save_container(mask_path, masks, MASK_MAGIC)
        manifest = dataset.manifest.model_copy(update={"files": {
            data_path.name: sha256_file(data_path),
            mask_path.name: sha256_file(mask_path),
        }})
        write_json(manifest_path, manifest.model_dump(mode="json"))
    dataset.manifest = manifest
    return manifest_path


def load_dataset(data_dir: Union[str, Path], verify: bool = True) -> SpriteDataset:
    settings = get_settings()
    data_dir = Path(data_dir)
    manifest = DatasetManifest.model_validate(read_json(data_dir / settings.data.manifest_file))
    if manifest.format_version != DATASET_FORMAT_VERSION:
        raise CheckpointFormatError(
            f"dataset format version {manifest.format_version} is not supported (reader supports {DATASET_FORMAT_VERSION})"
        )
    data_path = data_dir / settings.data.dataset_file
    mask_path = data_dir / settings.data.mask_file
    if verify:
        for path in (data_path, mask_path):
            if not path.exists():
                raise FileNotFoundError(f"Dataset file missing: {path}")
            expected = manifest.files.get(path.name)
            if expected is not None and sha256_file(path) != expected:
                raise CheckpointFormatError(f"{path.name} does not match the hash recorded in its manifest")

    tensors = load_container(data_path, CHECKPOINT_MAGIC)
    packed = load_container(mask_path, MASK_MAGIC)
    splits = {}
    for name in ("train", "test"):
        splits[name] = SplitData(
            images=tensors[f"{name}.images"],
            factors=tensors[f"{name}.factors"],
            concepts=tensors[f"{name}.concepts"],
            labels=tensors[f"{name}.labels"].astype(np.int64),
            masks=_unpack_masks(packed[f"{name}.masks"], manifest.size),
        )
    return SpriteDataset(splits["train"], splits["test"], manifest)
