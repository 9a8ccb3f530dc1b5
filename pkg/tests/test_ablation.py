from dataclasses import replace

import numpy as np
import pytest

from twostream.ablation import (
    ATTENTION_VARIANTS,
    AblationTable,
    ablation_suite,
)
from twostream.errors import NoTestDataError
from twostream.stream import StreamModel
from twostream.tensor import Tensor, no_grad


@pytest.mark.parametrize('spatial', [False, True])
def test_disabled_temporal_attention_averages_frames(rng, quick_config, spatial):
    cfg = replace(quick_config, spatial_attention=spatial, temporal_attention=False)
    model = StreamModel.initialize(rng, 'static', 4, 3, cfg)
    frames = rng.normal(size=(2, 5, 3, 3, 4))
    with no_grad():
        out = model.forward(Tensor(frames))
    np.testing.assert_allclose(out.attended.attention.weights.data, 0.2, atol=1e-12)
    np.testing.assert_allclose(
        out.attended.pooled.data, out.alphas.data.mean(axis=1), atol=1e-12
    )


def test_disabled_attention_is_average_pooling(rng, quick_config):
    cfg = replace(quick_config, spatial_attention=False, temporal_attention=False)
    model = StreamModel.initialize(rng, 'motion', 4, 3, cfg)
    frames = rng.normal(size=(2, 5, 3, 3, 4))
    with no_grad():
        out = model.forward(Tensor(frames))
    np.testing.assert_array_equal(out.attention.values.data, 1.0)
    np.testing.assert_allclose(out.alphas.data, frames.mean(axis=(2, 3)), atol=1e-12)
    np.testing.assert_allclose(
        out.attended.pooled.data, frames.mean(axis=(1, 2, 3)), atol=1e-12
    )


def test_table_layout():
    table = AblationTable(config={'seed': 1})
    table.add('attention', 'Frame', 0.5)
    table.add('attention', 'Frame+STA', 0.75)
    table.add('fusion', 'Late fusion', 0.8)
    assert table.to_dict() == {
        'config': {'seed': 1},
        'groups': {
            'attention': [
                {'variant': 'Frame', 'accuracy': 0.5},
                {'variant': 'Frame+STA', 'accuracy': 0.75},
            ],
            'fusion': [{'variant': 'Late fusion', 'accuracy': 0.8}],
        },
    }
    lines = table.to_text().splitlines()
    assert lines[0] == '[attention]'
    assert lines[1].split() == ['Method', 'Accuracy']
    assert lines[3] == 'Frame+STA    0.7500'
    assert '[fusion]' in lines
    assert table.get('Late fusion') == 0.8
    with pytest.raises(KeyError):
        table.get('Frame', group='fusion')


@pytest.fixture()
def suite(small_dataset, quick_config) -> AblationTable:
    return ablation_suite(small_dataset, quick_config)


def test_suite_rows(suite):
    variants = {group: [row['variant'] for row in rows] for group, rows in suite.to_dict()['groups'].items()}
    assert len(variants['attention']) == 3 * len(ATTENTION_VARIANTS)
    assert 'Optical flow+TA' in variants['attention']
    assert variants['collaboration'] == [
        'Two-stream+STA',
        'Two-stream+STA+AWL',
        'Two-stream+STA+CLN',
        'Two-stream+STA+CLN+AWL',
    ]
    assert variants['fusion'] == ['Late fusion', 'Early fusion', 'Adaptive fusion']
    assert all(0.0 <= row.accuracy <= 1.0 for row in suite.rows)


def test_suite_shares_accuracies_between_groups(suite):
    assert suite.get('Late fusion') == suite.get('Two-stream+STA+CLN')
    assert suite.get('Adaptive fusion') == suite.get('Two-stream+STA+CLN+AWL')
    assert suite.get('Two-stream+STA') == suite.get('Two-stream+STA', group='collaboration')


def test_suite_is_reproducible(suite, small_dataset, quick_config):
    assert ablation_suite(small_dataset, quick_config).to_dict() == suite.to_dict()


def test_suite_needs_test_split(small_dataset, quick_config):
    small_dataset.test = []
    with pytest.raises(NoTestDataError):
        ablation_suite(small_dataset, quick_config)
