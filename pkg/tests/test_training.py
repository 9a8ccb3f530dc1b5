from dataclasses import replace

import numpy as np
import pytest

from twostream.config import TrainConfig
from twostream.errors import NoTrainingDataError
from twostream.optim import Sgd
from twostream.tensor import Tensor
from twostream.training import (
    PlateauSchedule,
    TrainingHistory,
    accuracy,
    frozen_segments,
    stream_scores,
    train_collaborative,
    train_stream,
)


def test_single_video_is_memorized(small_dataset):
    cfg = TrainConfig(
        learning_rate=0.1,
        weight_decay=0.0,
        batch_size=1,
        max_iterations=1000,
        eval_every=1000,
        hidden_size=4,
        cam_channels=4,
    )
    _, history = train_stream(small_dataset.train[:1], 'static', cfg, small_dataset.num_classes)
    assert history.losses[-1] < 0.01
    assert history.losses[-1] < history.losses[0]
    assert_window_minima_decrease(history.losses)


def assert_window_minima_decrease(losses: list[float], window: int = 100) -> None:
    assert np.all(np.isfinite(losses))
    minima = [min(losses[lo:lo + window]) for lo in range(0, len(losses), window)]
    assert all(later <= earlier for earlier, later in zip(minima, minima[1:])), minima


def test_same_seed_gives_identical_parameters(small_dataset, quick_config):
    first, _ = train_stream(small_dataset.train, 'motion', quick_config, 3)
    second, _ = train_stream(small_dataset.train, 'motion', quick_config, 3)
    for name, value in first.state().items():
        np.testing.assert_array_equal(second.state()[name], value)


def test_seed_changes_parameters(small_dataset, quick_config):
    first, _ = train_stream(small_dataset.train, 'static', quick_config, 3)
    second, _ = train_stream(small_dataset.train, 'static', replace(quick_config, seed=2), 3)
    assert not np.array_equal(
        first.state()['lstm.input_weights'], second.state()['lstm.input_weights']
    )


def test_history_records_every_check(small_dataset, quick_config):
    model, history = train_stream(small_dataset.train, 'static', quick_config, 3)
    assert len(history.losses) == quick_config.max_iterations
    assert [it for it, _ in history.accuracies] == [3, 6]
    assert history.lr_drops == []
    report = history.to_dict()
    assert report['final_loss'] == history.losses[-1]
    assert report['accuracies'][-1][1] == accuracy(
        stream_scores(model, small_dataset.train), small_dataset.train
    )


def test_empty_history():
    assert TrainingHistory().to_dict() == {'final_loss': None, 'accuracies': [], 'lr_drops': []}


def test_training_needs_videos(quick_config):
    with pytest.raises(NoTrainingDataError):
        train_stream([], 'static', quick_config, 3)


def test_stream_scores_of_no_videos(small_dataset, quick_config):
    model, _ = train_stream(small_dataset.train, 'static', quick_config, 3)
    assert stream_scores(model, []).shape == (0, 3)


def test_plateau_schedule_drops_after_patience():
    cfg = TrainConfig(learning_rate=0.1, patience=2, max_lr_drops=1, lr_drop_factor=10.0)
    optimizer = Sgd({'w': Tensor(np.zeros(1), requires_grad=True)}, cfg)
    schedule = PlateauSchedule(optimizer, cfg)
    assert not schedule.observe(1, 0.5)
    assert not schedule.observe(2, 0.5)
    assert schedule.observe(3, 0.4)
    assert optimizer.learning_rate == pytest.approx(0.01)
    assert not schedule.observe(10, 0.1)
    assert schedule.drops == [3]


def test_plateau_schedule_resets_on_improvement():
    cfg = TrainConfig(patience=2)
    schedule = PlateauSchedule(Sgd({}, cfg), cfg)
    for iteration, acc in enumerate([0.1, 0.2, 0.3, 0.4], start=1):
        assert not schedule.observe(iteration, acc)
    assert schedule.drops == []


@pytest.fixture()
def streams(small_dataset, quick_config):
    static, _ = train_stream(small_dataset.train, 'static', quick_config, 3)
    motion, _ = train_stream(small_dataset.train, 'motion', quick_config, 3)
    return static, motion


def test_collaborative_training_keeps_streams_frozen(small_dataset, quick_config, streams):
    static, motion = streams
    before = {**static.state(), **{f'm.{k}': v for k, v in motion.state().items()}}
    collab, history = train_collaborative(small_dataset.train, static, motion, quick_config, 3)
    after = {**static.state(), **{f'm.{k}': v for k, v in motion.state().items()}}
    for name, value in before.items():
        np.testing.assert_array_equal(after[name], value)
    assert all(p.requires_grad for p in static.parameters() + motion.parameters())
    assert len(history.losses) == quick_config.max_iterations
    assert collab.segments == quick_config.segments


def test_collaborative_training_is_deterministic(small_dataset, quick_config, streams):
    static, motion = streams
    first, _ = train_collaborative(small_dataset.train, static, motion, quick_config, 3)
    second, _ = train_collaborative(small_dataset.train, static, motion, quick_config, 3)
    for name, value in first.state().items():
        np.testing.assert_array_equal(second.state()[name], value)


def test_finetuning_moves_stream_parameters(small_dataset, quick_config, streams):
    static, motion = streams
    before = static.state()['lstm.recurrent_weights'].copy()
    cfg = replace(quick_config, finetune_streams=True)
    train_collaborative(small_dataset.train, static, motion, cfg, 3)
    assert not np.array_equal(static.state()['lstm.recurrent_weights'], before)


def test_collaborative_network_memorizes_single_video(small_dataset, quick_config, streams):
    static, motion = streams
    cfg = replace(
        quick_config, learning_rate=0.1, weight_decay=0.0, batch_size=1,
        max_iterations=1000, eval_every=1000,
    )
    _, history = train_collaborative(small_dataset.train[:1], static, motion, cfg, 3)
    assert history.losses[-1] < 0.01
    assert_window_minima_decrease(history.losses)


def test_frozen_segments_shapes(small_dataset, streams):
    static, motion = streams
    V_s, V_m = frozen_segments(static, motion, small_dataset.test, 2)
    assert V_s.shape == (len(small_dataset.test), static.feature_dim, 2)
    assert V_m.shape == (len(small_dataset.test), motion.feature_dim, 2)
