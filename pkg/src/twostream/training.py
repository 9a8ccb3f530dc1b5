"""
Staged training: per-stream attention networks, then the collaborative
network on top of the (by default frozen) streams.
"""
import logging

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from twostream.collaborative import CollabModel, StreamFeatures
from twostream.common import StreamTag, VideoSample, stack_stream
from twostream.config import TrainConfig
from twostream.errors import NoTrainingDataError
from twostream.optim import Sgd, minibatches
from twostream.stream import StreamModel, StreamOutput
from twostream.temporal import segment_features
from twostream.tensor import Array, Tensor, cross_entropy, no_grad

logger = logging.getLogger(__name__)

INFERENCE_CHUNK = 64
"""Videos per forward pass when scoring without gradients"""


@dataclass
class TrainingHistory:
    losses: list[float] = field(default_factory=list)
    """Minibatch loss after every iteration"""
    accuracies: list[tuple[int, float]] = field(default_factory=list)
    """(iteration, held-out accuracy) at every check"""
    lr_drops: list[int] = field(default_factory=list)
    """Iterations at which the learning rate was divided"""

    def to_dict(self) -> dict[str, object]:
        return {
            'final_loss': self.losses[-1] if self.losses else None,
            'accuracies': [[it, acc] for it, acc in self.accuracies],
            'lr_drops': list(self.lr_drops),
        }


class PlateauSchedule:
    """
    Divide the learning rate by `cfg.lr_drop_factor` once held-out accuracy
    has not improved for `cfg.patience` iterations, at most
    `cfg.max_lr_drops` times.
    """

    def __init__(self, optimizer: Sgd, cfg: TrainConfig) -> None:
        self.optimizer = optimizer
        self.cfg = cfg
        self.best = -np.inf
        self.since = 0
        self.drops: list[int] = []

    def observe(self, iteration: int, accuracy: float) -> bool:
        if accuracy > self.best:
            self.best = accuracy
            self.since = iteration
            return False
        if (
            iteration - self.since >= self.cfg.patience
            and len(self.drops) < self.cfg.max_lr_drops
        ):
            self.optimizer.drop_learning_rate(self.cfg.lr_drop_factor)
            self.drops.append(iteration)
            self.since = iteration
            return True
        return False


def _chunks(count: int, size: int = INFERENCE_CHUNK) -> list[slice]:
    return [slice(lo, min(lo + size, count)) for lo in range(0, count, size)]


def stream_outputs(model: StreamModel, samples: Sequence[VideoSample]) -> list[StreamOutput]:
    """Inference-mode outputs over `samples` in chunks, without a tape."""
    frames, _ = stack_stream(list(samples), model.stream_tag)
    with no_grad():
        return [model.forward(Tensor(frames[chunk])) for chunk in _chunks(len(samples))]


def stream_scores(model: StreamModel, samples: Sequence[VideoSample]) -> Array:
    """(B, C) stream scores in inference mode."""
    if not samples:
        return np.zeros((0, model.num_classes))
    return np.concatenate([out.scores.data for out in stream_outputs(model, samples)])


def accuracy(scores: Array, samples: Sequence[VideoSample]) -> float:
    labels = np.array([s.label for s in samples])
    return float(np.mean(np.argmax(scores, axis=-1) == labels))


def _check_training_set(samples: Sequence[VideoSample], num_classes: int) -> None:
    if not samples:
        raise NoTrainingDataError('training split is empty')
    if num_classes < 1:
        raise NoTrainingDataError('dataset has no categories')


def train_stream(
    samples: Sequence[VideoSample],
    stream_tag: StreamTag,
    cfg: TrainConfig,
    num_classes: int,
    validation: Sequence[VideoSample] | None = None,
) -> tuple[StreamModel, TrainingHistory]:
    """
    Minibatch SGD on the equal sum of the spatial, feature-output and LSTM
    head cross-entropies. Accuracy on `validation` (the training videos if
    none are given) drives the plateau schedule.
    """
    _check_training_set(samples, num_classes)
    held_out = validation or samples
    rng = np.random.default_rng(cfg.seed)
    model = StreamModel.initialize(rng, stream_tag, samples[0].channels, num_classes, cfg)
    frames, labels = stack_stream(list(samples), stream_tag)

    optimizer = Sgd(model.named_parameters(), cfg)
    schedule = PlateauSchedule(optimizer, cfg)
    history = TrainingHistory()
    logger.info(
        'training %s stream on %d videos for %d iterations',
        stream_tag, len(samples), cfg.max_iterations,
    )
    batches = minibatches(rng, len(samples), cfg.batch_size, cfg.max_iterations)
    for iteration, batch in enumerate(batches, start=1):
        optimizer.zero_grad()
        output = model.forward(Tensor(frames[batch]), labels[batch])
        loss = model.loss(output, labels[batch])
        loss.backward()
        optimizer.step()
        history.losses.append(loss.item())

        if iteration % cfg.eval_every == 0 or iteration == cfg.max_iterations:
            acc = accuracy(stream_scores(model, held_out), held_out)
            history.accuracies.append((iteration, acc))
            logger.info(
                '%s iteration %d: loss %.4f, held-out accuracy %.3f',
                stream_tag, iteration, history.losses[-1], acc,
            )
            schedule.observe(iteration, acc)

    history.lr_drops = schedule.drops
    return model, history


def collab_inputs(
    static_model: StreamModel,
    motion_model: StreamModel,
    frames_static: Tensor,
    frames_motion: Tensor,
    segments: int,
    labels: np.ndarray | None = None,
) -> tuple[StreamFeatures, StreamFeatures]:
    """Segment features of both streams from their attended frame features."""
    static_out = static_model.forward(frames_static, labels)
    motion_out = motion_model.forward(frames_motion, labels)
    return (
        StreamFeatures(segment_features(static_out.attended.betas, segments), 'static'),
        StreamFeatures(segment_features(motion_out.attended.betas, segments), 'motion'),
    )


def frozen_segments(
    static_model: StreamModel,
    motion_model: StreamModel,
    samples: Sequence[VideoSample],
    segments: int,
) -> tuple[Array, Array]:
    """Inference-mode (B, D, N) segment features of both streams."""
    static_frames, _ = stack_stream(list(samples), 'static')
    motion_frames, _ = stack_stream(list(samples), 'motion')
    parts_s, parts_m = [], []
    with no_grad():
        for chunk in _chunks(len(samples)):
            V_s, V_m = collab_inputs(
                static_model, motion_model,
                Tensor(static_frames[chunk]), Tensor(motion_frames[chunk]),
                segments,
            )
            parts_s.append(V_s.V.data)
            parts_m.append(V_m.V.data)
    return np.concatenate(parts_s), np.concatenate(parts_m)


def collab_scores(
    collab: CollabModel, V_s: Array, V_m: Array
) -> tuple[Array, Array, Array, Array]:
    """(p_static, p_motion, O_s, O_m) for precomputed segment features."""
    with no_grad():
        state, p_static, p_motion = collab.forward(
            StreamFeatures(Tensor(V_s), 'static'), StreamFeatures(Tensor(V_m), 'motion')
        )
    return p_static.data, p_motion.data, state.O_s.data, state.O_m.data


def train_collaborative(
    samples: Sequence[VideoSample],
    static_model: StreamModel,
    motion_model: StreamModel,
    cfg: TrainConfig,
    num_classes: int,
    validation: Sequence[VideoSample] | None = None,
) -> tuple[CollabModel, TrainingHistory]:
    """
    Train the guidance parameters and both collaborative heads on the summed
    cross-entropy of the two heads. Stream parameters stay frozen unless
    `cfg.finetune_streams` is set.
    """
    _check_training_set(samples, num_classes)
    held_out = validation or samples
    rng = np.random.default_rng(cfg.seed)
    collab = CollabModel.initialize(
        rng,
        static_dim=static_model.feature_dim,
        motion_dim=motion_model.feature_dim,
        hidden=cfg.collab_hidden,
        num_classes=num_classes,
        rounds=cfg.unroll_rounds,
        segments=cfg.segments,
    )
    labels = np.array([s.label for s in samples], dtype=np.int64)

    params = collab.named_parameters('collab.')
    finetune = cfg.finetune_streams
    if finetune:
        static_model.set_trainable(True)
        motion_model.set_trainable(True)
        params |= static_model.named_parameters('static.')
        params |= motion_model.named_parameters('motion.')
        static_frames, _ = stack_stream(list(samples), 'static')
        motion_frames, _ = stack_stream(list(samples), 'motion')
    else:
        static_model.set_trainable(False)
        motion_model.set_trainable(False)
        cached_s, cached_m = frozen_segments(
            static_model, motion_model, samples, cfg.segments
        )

    optimizer = Sgd(params, cfg)
    schedule = PlateauSchedule(optimizer, cfg)
    history = TrainingHistory()
    logger.info(
        'training collaborative network on %d videos (%s streams)',
        len(samples), 'fine-tuned' if finetune else 'frozen',
    )
    batches = minibatches(rng, len(samples), cfg.batch_size, cfg.max_iterations)
    for iteration, batch in enumerate(batches, start=1):
        optimizer.zero_grad()
        if finetune:
            V_s, V_m = collab_inputs(
                static_model, motion_model,
                Tensor(static_frames[batch]), Tensor(motion_frames[batch]),
                cfg.segments, labels[batch],
            )
        else:
            V_s = StreamFeatures(Tensor(cached_s[batch]), 'static')
            V_m = StreamFeatures(Tensor(cached_m[batch]), 'motion')
        _, p_static, p_motion = collab.forward(V_s, V_m)
        loss = cross_entropy(p_static, labels[batch]) + cross_entropy(p_motion, labels[batch])
        loss.backward()
        optimizer.step()
        history.losses.append(loss.item())

        if iteration % cfg.eval_every == 0 or iteration == cfg.max_iterations:
            V_s_held, V_m_held = frozen_segments(
                static_model, motion_model, held_out, cfg.segments
            )
            p_s, p_m, _, _ = collab_scores(collab, V_s_held, V_m_held)
            acc = accuracy(0.5 * (p_s + p_m), held_out)
            history.accuracies.append((iteration, acc))
            logger.info(
                'collaborative iteration %d: loss %.4f, held-out accuracy %.3f',
                iteration, history.losses[-1], acc,
            )
            schedule.observe(iteration, acc)

    static_model.set_trainable(True)
    motion_model.set_trainable(True)
    history.lr_drops = schedule.drops
    return collab, history
