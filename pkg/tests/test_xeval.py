import json

import numpy as np
import pandas as pd
import pytest

from src.ndgrad.tensor import Tensor
from src.spritegen.annotations import TaskDef
from src.spritegen.config import load_sprite_config
from src.spritegen.dataset import generate_dataset
from src.taskhead.head import TaskHead
from src.trainer.model import BlackBoxModel
from src.utils.io import read_pgm
from src.xeval.attribution import (
    AttributionMap, concept_attributions, concept_score_fn, integrated_gradients, normalize_attributions, top_k_dims,
)
from src.xeval.evaluator import Evaluator
from src.xeval.intervention import (
    concepts_for_fraction, intervene_scores, intervention_curve, intervention_order,
)
from src.xeval.metrics import SplitPredictions, concept_error, iou, task_accuracy
from src.xeval.saliency import box_filter, dim_saliency
from src.xeval.traversal import latent_traversal


@pytest.fixture(scope="module")
def concept_names():
    return load_sprite_config().concept_names()


class HeadOnly:
    """Minimal model surface for intervention: a task head over two concepts."""

    def __init__(self):
        self.head = TaskHead(2, 2, np.random.default_rng(0))
        self.head.h.weight.data[...] = [[0.0, 1.0], [0.0, 1.0]]
        self.head.h.bias.data[...] = [0.0, -1.5]

    def predict_from_scores(self, scores):
        return self.head(scores)


class TestIntegratedGradients:
    @pytest.mark.parametrize("steps", [1, 8, 128])
    def test_linear_is_exact(self, steps):
        w = np.array([0.5, -2.0, 3.0])
        z = np.array([1.0, 2.0, -1.0])
        ig = integrated_gradients(lambda t: (t * w).sum(axis=1), z, steps=steps)
        np.testing.assert_allclose(ig, w * z, rtol=1e-12)

    def test_quadratic_completeness(self):
        ig = integrated_gradients(lambda t: (t * t)[:, 0], np.array([2.0]), steps=16)
        assert ig[0] == pytest.approx(4.0, rel=1e-12)

    def test_rejects_bad_steps(self):
        with pytest.raises(ValueError):
            integrated_gradients(lambda t: t.sum(axis=1), np.ones(2), steps=0)

    @pytest.mark.parametrize("steps, tolerance", [(128, 0.01), (16, 0.05)])
    def test_trained_concepts_are_complete(self, trained_model, steps, tolerance):
        held_out = generate_dataset(334, 16, TaskDef.parse("shape=square,x>0.5"), seed=21).test
        assert len(held_out) >= 100
        with_z = trained_model.latent_mean(Tensor(held_out.images[:100])).data
        gaps = []
        for z in with_z:
            raw = concept_attributions(trained_model, z, 6, steps=steps)
            for c in range(6):
                score = concept_score_fn(trained_model, c)
                change = score(Tensor(z[None])).item() - score(Tensor(np.zeros((1, z.size)))).item()
                if abs(change) > 1e-3:
                    gaps.append(AttributionMap("c", raw[c]).completeness_gap(change))
        assert len(gaps) >= 100
        assert np.mean(np.array(gaps) < tolerance) >= 0.95

    def test_batched_concepts_match_single_concept(self, trained_model, tiny_dataset):
        z = trained_model.latent_mean(Tensor(tiny_dataset.test.images[:1])).data[0]
        batched = concept_attributions(trained_model, z, 6, steps=16)
        single = integrated_gradients(concept_score_fn(trained_model, 3), z, steps=16)
        np.testing.assert_allclose(batched[3], single, rtol=1e-9, atol=1e-12)


class TestRanking:
    def test_top_k(self):
        assert top_k_dims(np.array([0.1, 0.5, 0.3]), 2).tolist() == [1, 2]
        assert top_k_dims(np.full(4, 0.7), 2).tolist() == [0, 1]
        assert top_k_dims(np.array([0.1, 0.5, 0.3]), 3).tolist() == [1, 2, 0]

    def test_top_k_range(self):
        with pytest.raises(ValueError):
            top_k_dims(np.ones(3), 4)

    def test_normalization(self):
        np.testing.assert_allclose(normalize_attributions([-2.0, 1.0, 0.0]), [1.0, 0.5, 0.0])
        np.testing.assert_array_equal(normalize_attributions(np.zeros(3)), np.zeros(3))


class TestMetrics:
    def test_iou_examples(self):
        a = np.zeros((10, 20), dtype=bool)
        b = np.zeros((10, 20), dtype=bool)
        a.reshape(-1)[:100] = True
        b.reshape(-1)[50:150] = True
        assert iou(a, b) == pytest.approx(1 / 3)
        assert iou(b, a) == iou(a, b)
        assert iou(a, a) == 1.0
        assert iou(a, ~a) == 0.0
        assert iou(np.zeros((2, 2)), np.zeros((2, 2))) == 0.0

    def test_concept_error_examples(self):
        labels = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert concept_error(labels, labels, "rmse") == 0.0
        assert concept_error(labels, labels, "zero_one") == 0.0
        assert concept_error(np.full((2, 2), 0.5), labels, "rmse") == pytest.approx(0.5)
        assert concept_error(np.array([0.9, 0.2]), np.array([1, 1]), "zero_one") == 0.5
        with pytest.raises(ValueError):
            concept_error(labels, labels, "hinge")

    def test_task_accuracy(self):
        assert task_accuracy(np.array([0, 1, 1, 0]), np.array([0, 1, 0, 0])) == 0.75


class TestSaliencyAndTraversal:
    def test_box_filter(self):
        out = box_filter(np.ones((5, 5)))
        assert out[2, 2] == pytest.approx(1.0)
        assert out[0, 0] == pytest.approx(4 / 9)

    def test_saliency_is_normalized_and_deterministic(self, trained_model, tiny_dataset):
        image = tiny_dataset.test.images[0]
        first = dim_saliency(trained_model, image, 0)
        second = dim_saliency(trained_model, image, 0)
        assert first.heat.max() == pytest.approx(1.0)
        np.testing.assert_array_equal(first.binary, second.binary)
        assert first.binary.dtype == bool

    def test_saliency_dimension_range(self, trained_model, tiny_dataset):
        with pytest.raises(IndexError):
            dim_saliency(trained_model, tiny_dataset.test.images[0], 4)

    def test_traversal(self, trained_model):
        frames = latent_traversal(trained_model, np.zeros(4), 1)
        assert frames.shape == (8, 16, 16)
        close = latent_traversal(trained_model, np.zeros(4), 1, lo=0.5 - 1e-7, hi=0.5, steps=2)
        assert np.linalg.norm(close[0] - close[1]) < 1e-4

    @pytest.mark.parametrize("kwargs, error", [
        (dict(dim=4), IndexError), (dict(dim=0, lo=1.0, hi=1.0), ValueError), (dict(dim=0, steps=1), ValueError),
    ])
    def test_traversal_errors(self, trained_model, kwargs, error):
        with pytest.raises(error):
            latent_traversal(trained_model, np.zeros(4), **kwargs)


class TestIntervention:
    scores = np.array([[0.2, 0.9]])
    truth = np.array([[1.0, 1.0]])

    def test_no_indices_keeps_prediction(self):
        assert intervene_scores(HeadOnly(), self.scores, self.truth, []).tolist() == [0]

    def test_fixing_concepts_corrects(self):
        model = HeadOnly()
        assert intervene_scores(model, self.scores, self.truth, [0]).tolist() == [1]
        assert intervene_scores(model, self.scores, self.truth, [0, 1]).tolist() == [1]
        assert intervene_scores(model, self.scores, self.truth, [1]).tolist() == [0]

    def test_index_out_of_range(self):
        with pytest.raises(ValueError):
            intervene_scores(HeadOnly(), self.scores, self.truth, [2])

    def test_orders(self):
        scores = np.array([[0.2, 0.9, 0.5], [0.5, 0.5, 0.1]])
        truth = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
        assert intervention_order(scores, truth, "deviant").tolist() == [[0, 2, 1], [2, 0, 1]]
        random = intervention_order(scores, truth, "random", np.random.default_rng(0))
        assert sorted(random[0].tolist()) == [0, 1, 2]
        with pytest.raises(ValueError):
            intervention_order(scores, truth, "greedy")

    @pytest.mark.parametrize("fraction, count", [(0.0, 0), (0.25, 2), (0.5, 3), (0.75, 5), (1.0, 6)])
    def test_concept_counts(self, fraction, count):
        assert concepts_for_fraction(fraction, 6) == count

    def test_empty_curve_without_mistakes(self, mocker):
        labels = np.array([0, 1])
        mocker.patch("src.xeval.intervention.predict_split", return_value=SplitPredictions(
            predicted=labels, probs=np.eye(2), concept_scores=np.full((2, 2), 0.5)))
        assert intervention_curve(HeadOnly(), np.zeros((2, 16, 16)), np.ones((2, 2)), labels, [0.0, 1.0]) == []

    def test_curve_on_mistakes(self, mocker):
        labels = np.array([1, 1])
        mocker.patch("src.xeval.intervention.predict_split", return_value=SplitPredictions(
            predicted=np.array([0, 1]), probs=np.eye(2), concept_scores=np.array([[0.2, 0.9], [0.9, 0.9]])))
        curve = intervention_curve(HeadOnly(), np.zeros((2, 16, 16)), np.ones((2, 2)), labels, [0.0, 0.5, 1.0])
        assert [r.concepts_intervened for r in curve] == [0, 1, 2]
        assert [r.corrected_rate for r in curve] == [0.0, 1.0, 1.0]
        assert all(r.sample_count == 1 for r in curve)

    def test_unsorted_fractions(self):
        with pytest.raises(ValueError):
            intervention_curve(HeadOnly(), np.zeros((1, 16, 16)), np.ones((1, 2)), np.ones(1), [0.5, 0.25])


class TestEvaluator:
    def test_run_writes_reports(self, trained_model, tiny_dataset, concept_names, tmp_path):
        summary = Evaluator(trained_model, tiny_dataset.test, concept_names, tmp_path, ig_steps=8).run()
        written = json.loads((tmp_path / "summary.json").read_text())
        assert set(written) == {"task_accuracy", "concept_error", "mean_iou_top2", "mean_iou_top5"}
        assert written["task_accuracy"] == summary.task_accuracy
        assert 0.0 <= written["mean_iou_top2"] <= 1.0

        details = json.loads((tmp_path / "details.json").read_text())
        assert details["sample_count"] == 30
        assert details["ig_steps"] == 8
        assert len(pd.read_csv(tmp_path / "iou.csv")) == 30 * 6
        assert len(pd.read_csv(tmp_path / "attributions.csv")) == 30 * 6 * 4
        assert (tmp_path / "head_weights.csv").exists()

    def test_parallel_attributions_match(self, trained_model, tiny_dataset, concept_names, tmp_path):
        indices = np.arange(6)
        serial = Evaluator(trained_model, tiny_dataset.test, concept_names, tmp_path, ig_steps=8).attributions(indices)
        parallel = Evaluator(trained_model, tiny_dataset.test, concept_names, tmp_path, workers=3,
                             ig_steps=8).attributions(indices)
        for a, b in zip(serial, parallel):
            for x, y in zip(a, b):
                np.testing.assert_array_equal(x.raw, y.raw)

    def test_attribute_and_traverse(self, trained_model, tiny_dataset, concept_names, tmp_path):
        evaluator = Evaluator(trained_model, tiny_dataset.test, concept_names, tmp_path, ig_steps=8)
        table = evaluator.attribute("is_square", 2, [0, 1])
        assert table["rank"].tolist() == [0, 1, 0, 1]
        assert (tmp_path / "attribution_is_square.csv").exists()
        assert (tmp_path / "concept_heat_is_square_s1.pgm").exists()
        for _, row in table.iterrows():
            heat = read_pgm(tmp_path / f"saliency_is_square_s{row['sample']}_d{row['dim']}.pgm")
            assert heat.shape == (16, 16)

        paths = evaluator.traverse(0, [0, 3], -2.0, 2.0, 3)
        assert len(paths) == 6
        assert paths[-1].name == "traversal_s0_d3_02.pgm"

    def test_bad_requests(self, trained_model, tiny_dataset, concept_names, tmp_path):
        evaluator = Evaluator(trained_model, tiny_dataset.test, concept_names, tmp_path, ig_steps=8)
        with pytest.raises(ValueError):
            evaluator.attribute("is_round", 2, [0])
        with pytest.raises(ValueError):
            evaluator.attribute("is_square", 2, [30])
        with pytest.raises(ValueError):
            evaluator.traverse(-1, [0], -2.0, 2.0, 8)

    def test_intervention_csv_has_header(self, trained_model, tiny_dataset, concept_names, tmp_path):
        results = Evaluator(trained_model, tiny_dataset.test, concept_names, tmp_path).intervention([0.0, 1.0], seed=0)
        table = pd.read_csv(tmp_path / "intervention.csv")
        assert list(table.columns) == ["fraction_intervened", "concepts_intervened", "corrected_rate", "sample_count"]
        assert len(table) == len(results)
        if results:
            assert results[0].corrected_rate == 0.0

    def test_blackbox_has_no_concept_reports(self, tiny_model_config, tiny_dataset, concept_names, tmp_path):
        model = BlackBoxModel(tiny_model_config, np.random.default_rng(0))
        evaluator = Evaluator(model, tiny_dataset.test, concept_names, tmp_path)
        summary = evaluator.run()
        assert summary.concept_error is None
        assert set(json.loads((tmp_path / "summary.json").read_text())) == {
            "task_accuracy", "concept_error", "mean_iou_top2", "mean_iou_top5"}
        assert not (tmp_path / "head_weights.csv").exists()
        with pytest.raises(ValueError):
            evaluator.traverse(0, [0], -2.0, 2.0, 8)
        with pytest.raises(ValueError):
            evaluator.intervention([0.0], seed=0)
