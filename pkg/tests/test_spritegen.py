import json

import numpy as np
import pytest
from pydantic import ValidationError

from src.models.data_model import Criterion, CriterionKind
from src.spritegen.annotations import TaskDef, derive_concepts, derive_task_label, task_label_from_factors
from src.spritegen.config import DatasetDefaults, load_sprite_config
from src.spritegen.dataset import (
    SpriteDatasetGenerator, generate_dataset, load_dataset, regenerate_from_manifest, save_dataset,
)
from src.spritegen.errors import FactorRangeError, TaskDefinitionError, UnsatisfiableTaskError
from src.spritegen.factors import FactorSpec, sample_factors
from src.spritegen.render import render_sprite
from src.ndgrad.errors import CheckpointFormatError


@pytest.fixture
def config():
    return load_sprite_config()


def spec(**overrides):
    values = dict(shape="square", scale=1.0, orientation=0.0, x_pos=0.5, y_pos=0.5)
    values.update(overrides)
    return FactorSpec(**values)


class TestRender:
    def test_centered_square_pixel_count(self, config):
        image, mask = render_sprite(spec(), 32, config)
        side = 1.0 * config.geometry.base_side_fraction * 32
        assert mask.sum() == round(side) ** 2
        np.testing.assert_array_equal(image, mask.astype(float))

    def test_square_quarter_turn_is_identical(self, config):
        _, upright = render_sprite(spec(), 32, config)
        _, turned = render_sprite(spec(orientation=np.pi / 2), 32, config)
        np.testing.assert_array_equal(upright, turned)

    def test_ellipse_scaling_is_nested(self, config):
        _, small = render_sprite(spec(shape="ellipse", scale=0.5), 32, config)
        _, large = render_sprite(spec(shape="ellipse", scale=1.0), 32, config)
        assert np.all(large[small])
        assert large.sum() > small.sum()

    def test_horizontal_shift_moves_mask(self, config):
        _, base = render_sprite(spec(shape="heart", x_pos=0.4), 32, config)
        _, shifted = render_sprite(spec(shape="heart", x_pos=0.4 + 3 / 32), 32, config)
        np.testing.assert_array_equal(np.roll(base, 3, axis=1), shifted)

    def test_top_sprites_sit_in_upper_rows(self, config):
        _, mask = render_sprite(spec(y_pos=0.75), 32, config)
        rows = np.nonzero(mask)[0]
        assert rows.max() < 16

    @pytest.mark.parametrize("overrides", [dict(scale=1.2), dict(x_pos=0.1), dict(shape="star")])
    def test_out_of_range_factors(self, config, overrides):
        with pytest.raises(FactorRangeError):
            render_sprite(spec(**overrides), 32, config)

    def test_unsupported_size(self, config):
        with pytest.raises(FactorRangeError):
            render_sprite(spec(), 24, config)

    def test_masks_never_empty(self, config, rng):
        for _ in range(50):
            _, mask = render_sprite(sample_factors(rng, config.factor_ranges), 16, config)
            assert mask.any()


class TestAnnotations:
    def test_heart_concepts(self, config):
        names = config.concept_names()
        concepts = dict(zip(names, derive_concepts(spec(shape="heart"), config.concept_defs)))
        assert concepts["is_heart"] and not concepts["is_square"] and not concepts["is_ellipse"]

    def test_threshold_is_strict(self, config):
        names = config.concept_names()
        at_boundary = dict(zip(names, derive_concepts(spec(scale=0.75, x_pos=0.7), config.concept_defs)))
        assert not at_boundary["is_large"]
        assert at_boundary["is_right"]

    @pytest.mark.parametrize("bits, label", [((1, 1), 1), ((1, 0), 0), ((0, 1), 0), ((0, 0), 0)])
    def test_task_label_is_conjunction(self, config, bits, label):
        task = TaskDef.parse("shape=square,x>0.5")
        concepts = np.zeros(6, dtype=bool)
        concepts[0], concepts[4] = bits
        assert derive_task_label(concepts, task, config.concept_defs) == label

    def test_parse_aliases_and_presets(self, config):
        task = TaskDef.parse("preset:square_right", config.task_presets)
        assert task.criterion_a == Criterion(factor="shape", kind=CriterionKind.equals, value="square")
        assert task.criterion_b == Criterion(factor="x_pos", kind=CriterionKind.greater, value=0.5)
        assert task.describe() == "shape=square,x_pos>0.5"

    @pytest.mark.parametrize("text", ["shape=square", "shape=square,shape=heart", "x>abc,y>0.5",
                                      "scale=0.5,x>0.5", "colour=red,x>0.5", "preset:unknown"])
    def test_invalid_tasks(self, config, text):
        with pytest.raises(TaskDefinitionError):
            TaskDef.parse(text, config.task_presets)

    def test_positive_rate_is_product_of_marginals(self, config):
        rng = np.random.default_rng(0)
        task = TaskDef.parse("x>0.5,y>0.5")
        labels = [task_label_from_factors(sample_factors(rng, config.factor_ranges), task) for _ in range(20000)]
        assert np.mean(labels) == pytest.approx(0.25, abs=0.02)


class TestDataset:
    def test_split_and_balance(self, tiny_dataset):
        assert len(tiny_dataset.train) == 70
        assert len(tiny_dataset.test) == 30
        assert tiny_dataset.manifest.positive_fraction == pytest.approx(0.5)
        assert sorted(tiny_dataset.manifest.train_indices + tiny_dataset.manifest.test_indices) == list(range(100))

    def test_labels_follow_factors(self, tiny_dataset):
        task = TaskDef.parse("shape=square,x>0.5")
        split = tiny_dataset.train
        for spec_, label in zip(split.factor_specs(), split.labels):
            assert task_label_from_factors(spec_, task) == label

    def test_determinism(self, tiny_dataset):
        again = generate_dataset(100, 16, TaskDef.parse("shape=square,x>0.5"), seed=3)
        np.testing.assert_array_equal(again.train.images, tiny_dataset.train.images)
        np.testing.assert_array_equal(again.test.factors, tiny_dataset.test.factors)

    def test_parallel_rendering_matches_serial(self, tiny_dataset):
        generator = SpriteDatasetGenerator(workers=4)
        again = generator.generate(100, 16, TaskDef.parse("shape=square,x>0.5"), seed=3)
        np.testing.assert_array_equal(again.test.masks, tiny_dataset.test.masks)

    def test_save_load_and_identical_bytes(self, tiny_dataset, tmp_path):
        first = save_dataset(tiny_dataset, tmp_path / "a")
        regenerated = regenerate_from_manifest(tiny_dataset.manifest)
        second = save_dataset(regenerated, tmp_path / "b")
        for name in ("dataset.cldr", "masks.cldm"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert json.loads(first.read_text())["files"] == json.loads(second.read_text())["files"]

        loaded = load_dataset(tmp_path / "a")
        np.testing.assert_array_equal(loaded.test.masks, tiny_dataset.test.masks)
        np.testing.assert_array_equal(loaded.train.labels, tiny_dataset.train.labels)
        assert loaded.train.labels.dtype == np.int64

    def test_tampered_file_is_detected(self, tiny_dataset, tmp_path):
        save_dataset(tiny_dataset, tmp_path)
        path = tmp_path / "dataset.cldr"
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointFormatError):
            load_dataset(tmp_path)

    def test_minimum_count(self):
        with pytest.raises(ValueError, match="at least 100"):
            generate_dataset(10, 16, TaskDef.parse("shape=square,x>0.5"), seed=0)

    def test_unsatisfiable_task(self, config):
        narrow = config.model_copy(update={"dataset": config.dataset.model_copy(update={"draws_per_sample": 1})})
        with pytest.raises(UnsatisfiableTaskError):
            SpriteDatasetGenerator(narrow).generate(100, 16, TaskDef.parse("x>0.79,y>0.79"), seed=0)

    def test_balance_window(self, config):
        generator = SpriteDatasetGenerator(config)
        task = TaskDef.parse("shape=square,x>0.5")
        assert config.dataset.balance_window == (0.45, 0.55)
        assert generator.check_balance(np.array([1] * 50 + [0] * 50), task) == 0.5
        assert generator.check_balance(np.array([1] * 45 + [0] * 55), task) == 0.45
        with pytest.raises(UnsatisfiableTaskError, match="balance window"):
            generator.check_balance(np.array([1] * 70 + [0] * 30), task)

    def test_generation_checks_balance_window(self, config):
        skewed = config.model_copy(update={"dataset": config.dataset.model_copy(update={"balance_window": (0.6, 0.7)})})
        with pytest.raises(UnsatisfiableTaskError, match="balance window"):
            SpriteDatasetGenerator(skewed).generate(100, 16, TaskDef.parse("shape=square,x>0.5"), seed=0)

    @pytest.mark.parametrize("window", [(0.55, 0.45), (-0.1, 0.5), (0.5, 1.2)])
    def test_invalid_balance_window(self, config, window):
        raw = {**config.dataset.model_dump(), "balance_window": window}
        with pytest.raises(ValidationError):
            DatasetDefaults.model_validate(raw)

    def test_factors_stay_uncorrelated(self):
        dataset = generate_dataset(1000, 16, TaskDef.parse("shape=square,x>0.5"), seed=11)
        factors = np.concatenate([dataset.train.factors, dataset.test.factors])
        # scale, orientation and y_pos are outside the task and must stay independent
        corr = np.corrcoef(factors[:, [1, 2, 4]].T)
        assert np.max(np.abs(corr - np.eye(3))) < 0.1
