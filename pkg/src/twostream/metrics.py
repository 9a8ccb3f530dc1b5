import logging

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from twostream.errors import NoTestDataError, ShapeMismatchError
from twostream.tensor import Array

logger = logging.getLogger(__name__)


def average_precision(scores: Array, relevant: np.ndarray) -> float:
    """
    Mean of precision@k over the ranks k of the relevant items, ranking by
    descending score. Equal scores keep their input order. NaN when nothing
    is relevant.
    """
    scores = np.asarray(scores, dtype=np.float64)
    relevant = np.asarray(relevant, dtype=bool)
    if scores.shape != relevant.shape or scores.ndim != 1:
        raise ShapeMismatchError(f'scores {scores.shape} vs relevance {relevant.shape}')
    if not relevant.any():
        return float('nan')
    ranked = relevant[np.argsort(-scores, kind='stable')]
    hits = np.cumsum(ranked)
    ranks = np.flatnonzero(ranked) + 1
    return float(np.mean(hits[ranks - 1] / ranks))


def mean_average_precision(scores: Array, labels: np.ndarray) -> float:
    """Mean AP over the categories with at least one positive video."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape[0] == 0:
        raise NoTestDataError('no scored videos')
    per_class = [
        average_precision(scores[:, j], labels == j) for j in range(scores.shape[1])
    ]
    present = [ap for ap in per_class if not np.isnan(ap)]
    return float(np.mean(present)) if present else 0.0


def confusion_matrix(labels: np.ndarray, predictions: np.ndarray, num_classes: int) -> Array:
    """
    Row i holds the share of category-i videos predicted as each category.
    Categories without test videos get an all-zero row.
    """
    counts = np.zeros((num_classes, num_classes))
    np.add.at(counts, (np.asarray(labels), np.asarray(predictions)), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


@dataclass
class EvalReport:
    accuracy: float
    confusion: Array = field(
        metadata={"description": "Row-normalized (true, predicted) shares, (c, c)."}
    )
    map_score: float
    num_videos: int = 0
    predictions: dict[str, int] = field(
        default_factory=dict,
        metadata={"description": "Predicted category per video id."},
    )

    def to_dict(self) -> dict[str, object]:
        return {
            'accuracy': self.accuracy,
            'confusion': self.confusion.tolist(),
            'map': self.map_score,
            'num_videos': self.num_videos,
            'predictions': dict(sorted(self.predictions.items())),
        }


def report_from_scores(
    scores: Array,
    labels: np.ndarray,
    video_ids: Sequence[str] = (),
    predictions: np.ndarray | None = None,
) -> EvalReport:
    """
    Score-based report; `predictions` defaults to the per-row argmax of
    `scores`, which also rank the videos for MAP.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] == 0:
        raise NoTestDataError('no test videos')
    if scores.shape[0] != labels.shape[0]:
        raise ShapeMismatchError(f'{scores.shape[0]} score rows for {labels.shape[0]} labels')
    if predictions is None:
        predictions = np.argmax(scores, axis=1)
    num_classes = scores.shape[1]
    report = EvalReport(
        accuracy=float(np.mean(predictions == labels)),
        confusion=confusion_matrix(labels, predictions, num_classes),
        map_score=mean_average_precision(scores, labels),
        num_videos=int(labels.shape[0]),
        predictions={vid: int(p) for vid, p in zip(video_ids, predictions)},
    )
    logger.info(
        'evaluated %d videos: accuracy %.3f, MAP %.3f',
        report.num_videos, report.accuracy, report.map_score,
    )
    return report
