"""
Two-stream score fusion.

Adaptive fusion learns, per category j, a weight pair on the simplex that
maximizes W_j . q_j, where q_j contrasts the category-j scores of the
positive training videos with lambda times those of the negatives. Two
variables on a simplex make the linear program a comparison of the segment
endpoints, so it is solved in closed form.
"""
import json
import logging

from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Self

import numpy as np

from twostream.config import TrainConfig
from twostream.errors import (
    BadConfigError,
    CorruptFileError,
    MissingFileError,
    NoTrainingDataError,
    ShapeMismatchError,
)
from twostream.layers import LinearHead
from twostream.optim import Sgd, minibatches
from twostream.tensor import Array, Tensor, cross_entropy, no_grad

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 5e-3


@dataclass
class StreamScores:
    S: Array = field(
        metadata={"description": "Row m is the softmax score vector of stream m, (2, c)."}
    )
    video_id: str = ''
    label: int | None = None

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=np.float64)
        if self.S.ndim != 2 or self.S.shape[0] != 2:
            raise ShapeMismatchError(f'stream scores of shape {self.S.shape}')

    @property
    def num_classes(self) -> int:
        return self.S.shape[1]


@dataclass
class FusionWeights:
    W: Array = field(metadata={"description": "Row j is (w_j1, w_j2), shape (c, 2)."})
    lam: float = DEFAULT_LAMBDA
    epsilon: float = 0.0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)

    @classmethod
    def uniform(cls, num_classes: int) -> Self:
        return cls(np.full((num_classes, 2), 0.5))

    def to_json(self) -> dict[str, object]:
        data: dict[str, object] = {
            str(j): [float(w1), float(w2)] for j, (w1, w2) in enumerate(self.W)
        }
        data['lambda'] = self.lam
        data['epsilon'] = self.epsilon
        return data

    @classmethod
    def from_json(cls, data: dict[str, object]) -> Self:
        try:
            rows = sorted(
                ((int(k), v) for k, v in data.items() if k not in ('lambda', 'epsilon')),
                key=lambda item: item[0],
            )
            W = np.array([[float(w) for w in v] for _, v in rows])  # type: ignore[union-attr]
            return cls(W, float(data['lambda']), float(data['epsilon']))  # type: ignore[arg-type]
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptFileError(f'fusion weights: {e}') from e

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + '\n')

    @classmethod
    def load(cls, path: Path | str) -> Self:
        path = Path(path)
        if not path.is_file():
            raise MissingFileError(str(path))
        try:
            return cls.from_json(json.loads(path.read_text()))
        except json.JSONDecodeError as e:
            raise CorruptFileError(f'{path}: {e}') from e


def coefficient_vector(
    scores: Sequence[StreamScores], j: int, lam: float = DEFAULT_LAMBDA
) -> Array:
    """q_j = sum of column j over positives - lam * sum over negatives."""
    if not scores:
        raise NoTrainingDataError('no scored training videos')
    positive = np.zeros(2)
    negative = np.zeros(2)
    for item in scores:
        if item.label is None:
            raise NoTrainingDataError(f'video {item.video_id} has no label')
        if item.label == j:
            positive += item.S[:, j]
        else:
            negative += item.S[:, j]
    return positive - lam * negative


def _segment_argmax(q: Array, epsilon: float) -> Array:
    if q[0] > q[1]:
        return np.array([1.0 - epsilon, epsilon])
    if q[0] < q[1]:
        return np.array([epsilon, 1.0 - epsilon])
    return np.array([0.5, 0.5])


def learn_weights(
    scores: Sequence[StreamScores], lam: float = DEFAULT_LAMBDA, epsilon: float = 0.0
) -> FusionWeights:
    """Per-category maximizer of W_j . q_j over {w1 + w2 = 1, w_i >= epsilon}."""
    if lam < 0:
        raise BadConfigError(f'lambda must be nonnegative, got {lam}')
    if not 0 <= epsilon < 0.5:
        raise BadConfigError(f'epsilon must lie in [0, 0.5), got {epsilon}')
    if not scores:
        raise NoTrainingDataError('no scored training videos')
    num_classes = scores[0].num_classes
    W = np.stack([
        _segment_argmax(coefficient_vector(scores, j, lam), epsilon)
        for j in range(num_classes)
    ])
    logger.info(
        'learned fusion weights for %d categories (%d static-leaning)',
        num_classes, int(np.sum(W[:, 0] > W[:, 1])),
    )
    return FusionWeights(W, lam, epsilon)


def fused_scores(weights: FusionWeights, S_t: StreamScores) -> Array:
    """W_i . S_t J_i for every category i."""
    if weights.W.shape != (S_t.num_classes, 2):
        raise ShapeMismatchError(
            f'weights {weights.W.shape} for {S_t.num_classes} categories'
        )
    return weights.W[:, 0] * S_t.S[0] + weights.W[:, 1] * S_t.S[1]


def predict(weights: FusionWeights, S_t: StreamScores) -> int:
    return int(np.argmax(fused_scores(weights, S_t)))


def late_scores(S_t: StreamScores) -> Array:
    return S_t.S.mean(axis=0)


def late_fusion(S_t: StreamScores) -> int:
    """Category with the highest averaged two-stream score."""
    return int(np.argmax(late_scores(S_t)))


def early_fusion_train(
    static_features: Array,
    motion_features: Array,
    labels: np.ndarray,
    num_classes: int,
    cfg: TrainConfig,
) -> LinearHead:
    """Linear softmax classifier over concatenated pooled stream features."""
    x = _concatenate(static_features, motion_features)
    labels = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise NoTrainingDataError('no videos for early fusion')
    rng = np.random.default_rng(cfg.seed)
    head = LinearHead.initialize(rng, x.shape[1], num_classes)
    optimizer = Sgd(head.named_parameters(), cfg)
    for batch in minibatches(rng, x.shape[0], cfg.batch_size, cfg.max_iterations):
        optimizer.zero_grad()
        cross_entropy(head(Tensor(x[batch])), labels[batch]).backward()
        optimizer.step()
    return head


def early_fusion_predict(
    head: LinearHead, static_features: Array, motion_features: Array
) -> np.ndarray:
    x = _concatenate(static_features, motion_features)
    with no_grad():
        probs = head(Tensor(x)).data
    return np.argmax(probs, axis=-1)


def _concatenate(static_features: Array, motion_features: Array) -> Array:
    static_features = np.atleast_2d(static_features)
    motion_features = np.atleast_2d(motion_features)
    if static_features.shape[0] != motion_features.shape[0]:
        raise ShapeMismatchError(
            f'{static_features.shape[0]} static vs {motion_features.shape[0]} motion rows'
        )
    return np.concatenate([static_features, motion_features], axis=1)
