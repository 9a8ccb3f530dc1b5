"""
The assembled two-stream network and the staged training pipeline.

Stage 1 trains each stream's spatial-temporal attention network, stage 2
the collaborative network over the frozen streams, stage 3 the per-category
fusion weights on training-set scores.
"""
import logging

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from twostream.collaborative import CollabModel
from twostream.common import Dataset, VideoSample
from twostream.config import TrainConfig
from twostream.errors import NoTestDataError, ShapeMismatchError
from twostream.fusion import (
    DEFAULT_LAMBDA,
    FusionWeights,
    StreamScores,
    fused_scores,
    learn_weights,
    predict,
)
from twostream.metrics import EvalReport, report_from_scores
from twostream.stream import StreamModel
from twostream.temporal import segment_bounds
from twostream.tensor import Array
from twostream.training import (
    TrainingHistory,
    collab_scores,
    frozen_segments,
    stream_outputs,
    train_collaborative,
    train_stream,
)

logger = logging.getLogger(__name__)


@dataclass
class TwoStreamModel:
    static: StreamModel
    motion: StreamModel
    collab: CollabModel | None = None
    weights: FusionWeights | None = None

    def __post_init__(self):
        if self.static.num_classes != self.motion.num_classes:
            raise ShapeMismatchError(
                f'static stream has {self.static.num_classes} categories, '
                f'motion stream {self.motion.num_classes}'
            )

    @property
    def num_classes(self) -> int:
        return self.static.num_classes

    def _outputs(self, samples: Sequence[VideoSample]) -> tuple[Array, Array, Array, Array]:
        """(S_static, S_motion, F_static, F_motion) rows per video."""
        if self.collab is not None:
            V_s, V_m = frozen_segments(self.static, self.motion, samples, self.collab.segments)
            return collab_scores(self.collab, V_s, V_m)
        static = stream_outputs(self.static, samples)
        motion = stream_outputs(self.motion, samples)
        return (
            np.concatenate([out.scores.data for out in static]),
            np.concatenate([out.scores.data for out in motion]),
            np.concatenate([out.attended.pooled.data for out in static]),
            np.concatenate([out.attended.pooled.data for out in motion]),
        )

    def stream_scores(self, samples: Sequence[VideoSample]) -> list[StreamScores]:
        """
        One (2, c) score matrix per video: the collaborative heads when a
        collaborative network is attached, the stream heads otherwise.
        """
        if not samples:
            return []
        S_static, S_motion, _, _ = self._outputs(samples)
        return [
            StreamScores(np.stack([s, m]), sample.id, sample.label)
            for s, m, sample in zip(S_static, S_motion, samples)
        ]

    def features(self, samples: Sequence[VideoSample]) -> tuple[Array, Array]:
        """Video-level features of both streams, as fed to early fusion."""
        _, _, F_static, F_motion = self._outputs(samples)
        return F_static, F_motion

    def fusion_weights(self) -> FusionWeights:
        return self.weights or FusionWeights.uniform(self.num_classes)


@dataclass
class PipelineResult:
    model: TwoStreamModel
    histories: dict[str, TrainingHistory] = field(default_factory=dict)


def learn_fusion(
    model: TwoStreamModel, samples: Sequence[VideoSample], cfg: TrainConfig
) -> FusionWeights:
    return learn_weights(model.stream_scores(samples), cfg.lam, cfg.epsilon)


def fused_accuracy(weights: FusionWeights, scored: Sequence[StreamScores]) -> float:
    return float(np.mean([predict(weights, item) == item.label for item in scored]))


def select_lambda(
    model: TwoStreamModel,
    train: Sequence[VideoSample],
    val: Sequence[VideoSample],
    grid: Sequence[float],
    cfg: TrainConfig,
) -> FusionWeights:
    """
    Fusion weights learned on `train` for the lambda in `grid` whose weights
    fuse `val` most accurately. Ties go to DEFAULT_LAMBDA, then to the
    smallest lambda. Without a grid or validation videos `cfg.lam` is used.
    """
    if not grid or not val:
        if grid:
            logger.warning('no validation videos, keeping lambda %g', cfg.lam)
        return learn_fusion(model, train, cfg)
    train_scores = model.stream_scores(train)
    val_scores = model.stream_scores(val)
    candidates = []
    for lam in sorted(set(grid)):
        weights = learn_weights(train_scores, lam, cfg.epsilon)
        acc = fused_accuracy(weights, val_scores)
        logger.info('lambda %g: validation accuracy %.3f', lam, acc)
        candidates.append((acc, lam == DEFAULT_LAMBDA, weights))
    # max keeps the first of equal keys, the smallest lambda
    _, _, chosen = max(candidates, key=lambda c: c[:2])
    logger.info('selected lambda %g', chosen.lam)
    return chosen


def train_pipeline(
    dataset: Dataset,
    cfg: TrainConfig,
    collaborative: bool = True,
    adaptive: bool = True,
    lambda_grid: Sequence[float] = (),
) -> PipelineResult:
    histories: dict[str, TrainingHistory] = {}
    static, histories['static'] = train_stream(
        dataset.train, 'static', cfg, dataset.num_classes, dataset.val
    )
    motion, histories['motion'] = train_stream(
        dataset.train, 'motion', cfg, dataset.num_classes, dataset.val
    )
    model = TwoStreamModel(static, motion)
    if collaborative:
        model.collab, histories['collab'] = train_collaborative(
            dataset.train, static, motion, cfg, dataset.num_classes, dataset.val
        )
    if adaptive:
        model.weights = select_lambda(model, dataset.train, dataset.val, lambda_grid, cfg)
    return PipelineResult(model, histories)


def evaluate(
    samples: Sequence[VideoSample],
    model: TwoStreamModel,
    weights: FusionWeights | None = None,
    workers: int = 1,
) -> EvalReport:
    """
    Fused-score evaluation. Without `weights` the model's own fusion weights
    apply, and without those uniform weights (late fusion). Videos are
    scored in id order; with `workers > 1` contiguous shards are scored on a
    thread pool and merged back in that order.
    """
    if not samples:
        raise NoTestDataError('test split is empty')
    ordered = sorted(samples, key=lambda s: s.id)
    weights = weights or model.fusion_weights()

    if workers > 1:
        shards = [
            ordered[lo:hi] for lo, hi in segment_bounds(len(ordered), min(workers, len(ordered)))
        ]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(model.stream_scores, shards))
        scored = [item for part in parts for item in part]
    else:
        scored = model.stream_scores(ordered)

    fused = np.stack([fused_scores(weights, item) for item in scored])
    labels = np.array([item.label for item in scored], dtype=np.int64)
    return report_from_scores(fused, labels, [item.video_id for item in scored])
