import numpy as np
import pytest

from twostream.errors import NoTestDataError, ShapeMismatchError
from twostream.metrics import (
    EvalReport,
    average_precision,
    confusion_matrix,
    mean_average_precision,
    report_from_scores,
)


def test_perfect_predictions():
    labels = np.array([0, 1, 2, 2, 1])
    scores = np.eye(3)[labels] * 0.8 + 0.1
    report = report_from_scores(scores, labels, [f'v{i}' for i in range(5)])
    assert report.accuracy == 1.0
    np.testing.assert_array_equal(report.confusion, np.eye(3))
    assert report.map_score == 1.0
    assert report.predictions == {'v0': 0, 'v1': 1, 'v2': 2, 'v3': 2, 'v4': 1}


def test_single_relevant_item_at_second_rank():
    assert average_precision(np.array([0.9, 0.5, 0.1]), np.array([False, True, False])) == 0.5


def test_average_precision_two_hits():
    ap = average_precision(np.array([0.9, 0.8, 0.7, 0.1]), np.array([1, 0, 1, 0]))
    assert ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)


def test_ties_keep_input_order():
    scores = np.full(3, 0.5)
    assert average_precision(scores, np.array([1, 0, 0])) == 1.0
    assert average_precision(scores, np.array([0, 0, 1])) == pytest.approx(1.0 / 3.0)


def test_nothing_relevant_is_nan():
    assert np.isnan(average_precision(np.array([0.3, 0.7]), np.array([0, 0])))


def test_average_precision_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        average_precision(np.ones(3), np.ones(2))


def test_map_skips_absent_categories():
    scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.7, 0.1]])
    assert mean_average_precision(scores, np.array([0, 1])) == 1.0


def test_map_needs_videos():
    with pytest.raises(NoTestDataError):
        mean_average_precision(np.zeros((0, 3)), np.zeros(0))


def test_random_scores_sit_at_chance(rng):
    labels = rng.integers(5, size=1000)
    scores = rng.random((1000, 5))
    report = report_from_scores(scores, labels)
    assert report.accuracy == pytest.approx(0.2, abs=0.05)
    assert report.map_score == pytest.approx(0.2, abs=0.05)


def test_confusion_rows_of_absent_categories_are_zero():
    matrix = confusion_matrix(np.array([0, 0, 2]), np.array([0, 1, 2]), 3)
    np.testing.assert_allclose(matrix, [[0.5, 0.5, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def test_explicit_predictions_override_argmax():
    scores = np.array([[0.9, 0.1], [0.8, 0.2]])
    report = report_from_scores(scores, np.array([1, 1]), predictions=np.array([1, 1]))
    assert report.accuracy == 1.0


def test_report_errors():
    with pytest.raises(NoTestDataError):
        report_from_scores(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ShapeMismatchError):
        report_from_scores(np.ones((3, 2)), np.array([0, 1]))


def test_report_dict_layout():
    report = EvalReport(0.5, np.eye(2), 0.75, num_videos=2, predictions={'b': 1, 'a': 0})
    data = report.to_dict()
    assert data == {
        'accuracy': 0.5,
        'confusion': [[1.0, 0.0], [0.0, 1.0]],
        'map': 0.75,
        'num_videos': 2,
        'predictions': {'a': 0, 'b': 1},
    }
    assert list(data['predictions']) == ['a', 'b']
