import numpy as np
import pandas as pd
import pytest

from src.ndgrad.errors import ShapeError
from src.ndgrad.gradcheck import finite_diff_check
from src.ndgrad.tensor import Tensor
from src.taskhead.head import TaskHead, TaskPrediction, pred_loss

CONCEPTS = ["is_square", "is_ellipse", "is_heart", "is_large", "is_right", "is_top"]


@pytest.fixture
def head():
    head = TaskHead(6, 2, np.random.default_rng(0))
    head.h.weight.data[...] = 0.0
    head.h.bias.data[...] = 0.0
    return head


def test_zero_weights_give_uniform_probs(head, rng):
    pred = head(Tensor(rng.uniform(size=(4, 6))))
    np.testing.assert_allclose(pred.probs.data, 0.5)


def test_closed_form_example(head):
    head.h.weight.data[:, 0] = [2.0, -1.0, 0.0, 0.0, 0.0, 0.0]
    pred = head(Tensor([[1.0, 0.5, 0.2, 0.9, 0.1, 0.3]]))
    np.testing.assert_allclose(pred.logits.data, [[1.5, 0.0]])
    np.testing.assert_allclose(pred.probs.data, [[0.8176, 0.1824]], atol=1e-4)
    assert pred.predicted().tolist() == [0]
    assert pred_loss(pred, [1]).item() == pytest.approx(1.7014, abs=1e-4)


def test_uniform_loss_is_ln2(head):
    assert pred_loss(head(Tensor(np.zeros((3, 6)))), [0, 1, 1]).item() == pytest.approx(np.log(2), rel=1e-12)


def test_unannotated_scores_have_no_effect(rng):
    head = TaskHead(6, 2, rng)
    scores = rng.uniform(size=(2, 8))
    before = head(Tensor(scores)).probs.data
    scores[:, 6:] = rng.uniform(size=(2, 2))
    np.testing.assert_array_equal(head(Tensor(scores)).probs.data, before)


def test_too_few_scores(head):
    with pytest.raises(ShapeError):
        head(Tensor(np.zeros((1, 5))))


def test_softmax_shift_invariance(rng):
    logits = rng.normal(size=(5, 3))
    shifted = TaskPrediction(Tensor(logits + 7.5))
    base = TaskPrediction(Tensor(logits))
    np.testing.assert_allclose(shifted.probs.data, base.probs.data, atol=1e-12)
    np.testing.assert_array_equal(shifted.predicted(), base.predicted())


def test_loss_gradient_is_probs_minus_onehot(rng):
    logits = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
    pred = TaskPrediction(logits)
    pred_loss(pred, [2]).backward()
    np.testing.assert_allclose(logits.grad, pred.probs.data - np.array([[0.0, 0.0, 1.0]]), atol=1e-12)
    assert finite_diff_check(lambda t: pred_loss(TaskPrediction(t), [2]), logits) < 1e-6


@pytest.mark.parametrize("labels", [[2], [-1]])
def test_invalid_class_index(head, labels):
    with pytest.raises(ValueError):
        pred_loss(head(Tensor(np.zeros((1, 6)))), labels)


def test_weight_table_and_export(head, tmp_path):
    head.h.weight.data[:, 0] = np.arange(6.0)
    head.h.bias.data[...] = [0.5, -0.5]
    table = head.weight_table(CONCEPTS)
    assert list(table.columns) == ["concept", "class_0", "class_1"]
    assert table["concept"].tolist() == CONCEPTS + ["bias"]
    assert table.loc[table["concept"] == "is_right", "class_0"].item() == 4.0

    path = head.export_weights(tmp_path / "head_weights.csv", CONCEPTS)
    pd.testing.assert_frame_equal(pd.read_csv(path), table)

    with pytest.raises(ValueError):
        head.weight_table(CONCEPTS[:3])
