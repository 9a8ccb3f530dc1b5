from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pytest

from twostream.errors import BadConfigError, NoTestDataError, ShapeMismatchError
from twostream.fusion import FusionWeights, learn_weights
from twostream.pipeline import (
    TwoStreamModel,
    evaluate,
    fused_accuracy,
    learn_fusion,
    select_lambda,
    train_pipeline,
)
from twostream.stream import StreamModel
from twostream.synthetic import generate_synthetic


@pytest.fixture()
def trained(small_dataset, quick_config):
    return train_pipeline(small_dataset, quick_config)


def test_pipeline_trains_every_stage(trained):
    assert set(trained.histories) == {'static', 'motion', 'collab'}
    assert trained.model.collab is not None
    assert trained.model.weights is not None
    np.testing.assert_allclose(trained.model.weights.W.sum(axis=1), 1.0)


def test_pipeline_without_collaboration(small_dataset, quick_config):
    result = train_pipeline(small_dataset, quick_config, collaborative=False, adaptive=False)
    assert result.model.collab is None
    np.testing.assert_array_equal(result.model.fusion_weights().W, np.full((3, 2), 0.5))


def test_stream_scores_shape(trained, small_dataset):
    scored = trained.model.stream_scores(small_dataset.test)
    assert len(scored) == len(small_dataset.test)
    for item, sample in zip(scored, small_dataset.test):
        assert item.S.shape == (2, 3)
        assert item.video_id == sample.id
        np.testing.assert_allclose(item.S.sum(axis=1), 1.0)
    assert trained.model.stream_scores([]) == []


def test_features_match_stream_dimensions(trained, small_dataset):
    F_static, F_motion = trained.model.features(small_dataset.test)
    assert F_static.shape == (len(small_dataset.test), trained.model.static.feature_dim)
    assert F_motion.shape == (len(small_dataset.test), trained.model.motion.feature_dim)


def test_parallel_evaluation_matches_serial(trained, small_dataset):
    serial = evaluate(small_dataset.test, trained.model)
    parallel = evaluate(small_dataset.test, trained.model, workers=3)
    assert parallel.predictions == serial.predictions
    assert parallel.accuracy == serial.accuracy
    np.testing.assert_array_equal(parallel.confusion, serial.confusion)


def test_evaluation_ignores_input_order(trained, small_dataset):
    forward = evaluate(small_dataset.test, trained.model)
    backward = evaluate(small_dataset.test[::-1], trained.model)
    assert forward.to_dict() == backward.to_dict()


def test_explicit_weights_override_model_weights(trained, small_dataset):
    static_only = FusionWeights(np.tile([1.0, 0.0], (3, 1)))
    report = evaluate(small_dataset.test, trained.model, static_only)
    scored = trained.model.stream_scores(sorted(small_dataset.test, key=lambda s: s.id))
    expected = {item.video_id: int(np.argmax(item.S[0])) for item in scored}
    assert report.predictions == expected


def test_learned_fusion_matches_training_scores(trained, small_dataset, quick_config):
    weights = learn_fusion(trained.model, small_dataset.train, quick_config)
    np.testing.assert_array_equal(weights.W, trained.model.weights.W)


def test_evaluate_needs_videos(trained):
    with pytest.raises(NoTestDataError):
        evaluate([], trained.model)


def test_streams_must_agree_on_categories(rng, quick_config):
    static = StreamModel.initialize(rng, 'static', 4, 3, quick_config)
    motion = StreamModel.initialize(rng, 'motion', 4, 2, quick_config)
    with pytest.raises(ShapeMismatchError):
        TwoStreamModel(static, motion)


@pytest.fixture()
def validated(small_synthetic):
    return generate_synthetic(replace(small_synthetic, val_per_class=2))


@pytest.fixture()
def untrained(rng, quick_config):
    return TwoStreamModel(
        StreamModel.initialize(rng, 'static', 4, 3, quick_config),
        StreamModel.initialize(rng, 'motion', 4, 3, quick_config),
    )


def test_selected_lambda_fuses_validation_best(untrained, validated, quick_config):
    grid = [0.0, 5e-3, 0.1, 1.0]
    weights = select_lambda(untrained, validated.train, validated.val, grid, quick_config)
    assert weights.lam in grid
    val_scores = untrained.stream_scores(validated.val)
    train_scores = untrained.stream_scores(validated.train)
    best = max(
        fused_accuracy(learn_weights(train_scores, lam), val_scores) for lam in grid
    )
    assert fused_accuracy(weights, val_scores) == best


@pytest.mark.parametrize(
    'grid,expected', [([0.5, 5e-3, 0.01], 5e-3), ([0.5, 0.01, 0.2], 0.01)]
)
def test_lambda_ties_prefer_default_then_smallest(
    untrained, validated, quick_config, grid, expected
):
    with patch('twostream.pipeline.fused_accuracy', return_value=0.5):
        weights = select_lambda(untrained, validated.train, validated.val, grid, quick_config)
    assert weights.lam == expected


def test_lambda_selection_needs_validation_videos(untrained, small_dataset, quick_config):
    cfg = replace(quick_config, lam=0.2)
    weights = select_lambda(untrained, small_dataset.train, [], [0.0, 1.0], cfg)
    assert weights.lam == 0.2
    np.testing.assert_array_equal(
        weights.W, learn_fusion(untrained, small_dataset.train, cfg).W
    )


def test_negative_lambda_in_grid(untrained, validated, quick_config):
    with pytest.raises(BadConfigError):
        select_lambda(untrained, validated.train, validated.val, [-1.0], quick_config)
