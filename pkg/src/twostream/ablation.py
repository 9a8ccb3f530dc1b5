"""
Ablation suite over attention levels, collaboration and fusion schemes.

Attention group: each stream and their late fusion with no attention, SA,
TA and both. Collaboration group: the STA two-stream network with and
without the collaborative network and adaptive weights. Fusion group: late,
early and adaptive fusion over the collaborative features.
"""
import logging

from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from twostream.common import Dataset, VideoSample
from twostream.config import TrainConfig
from twostream.errors import NoTestDataError
from twostream.fusion import (
    FusionWeights,
    early_fusion_predict,
    early_fusion_train,
    learn_weights,
    predict,
)
from twostream.pipeline import TwoStreamModel
from twostream.training import train_collaborative, train_stream

logger = logging.getLogger(__name__)

ATTENTION_VARIANTS: dict[str, tuple[bool, bool]] = {
    '': (False, False),
    '+SA': (True, False),
    '+TA': (False, True),
    '+STA': (True, True),
}
"""Row suffix -> (spatial_attention, temporal_attention)"""

STREAM_NAMES = {'static': 'Frame', 'motion': 'Optical flow', 'two-stream': 'Two-stream'}


class AblationRow(NamedTuple):
    group: str
    variant: str
    accuracy: float


@dataclass
class AblationTable:
    rows: list[AblationRow] = field(default_factory=list)
    config: dict[str, object] = field(default_factory=dict)

    def add(self, group: str, variant: str, accuracy: float) -> None:
        logger.info('%s / %s: %.4f', group, variant, accuracy)
        self.rows.append(AblationRow(group, variant, accuracy))

    def get(self, variant: str, group: str | None = None) -> float:
        for row in self.rows:
            if row.variant == variant and group in (None, row.group):
                return row.accuracy
        raise KeyError(variant)

    def to_dict(self) -> dict[str, object]:
        groups: dict[str, list[dict[str, object]]] = {}
        for row in self.rows:
            groups.setdefault(row.group, []).append(
                {'variant': row.variant, 'accuracy': row.accuracy}
            )
        return {'config': self.config, 'groups': groups}

    def to_text(self) -> str:
        width = max([len('Method')] + [len(row.variant) for row in self.rows])
        lines = []
        for group in dict.fromkeys(row.group for row in self.rows):
            lines.append(f'[{group}]')
            lines.append(f'{"Method":<{width}}  Accuracy')
            lines.extend(
                f'{row.variant:<{width}}  {row.accuracy:.4f}'
                for row in self.rows if row.group == group
            )
            lines.append('')
        return '\n'.join(lines)


def _labels(samples: Sequence[VideoSample]) -> np.ndarray:
    return np.array([s.label for s in samples], dtype=np.int64)


def _accuracy(predictions: np.ndarray, samples: Sequence[VideoSample]) -> float:
    return float(np.mean(np.asarray(predictions) == _labels(samples)))


def _fused_accuracy(
    model: TwoStreamModel, weights: FusionWeights, samples: Sequence[VideoSample]
) -> float:
    scored = model.stream_scores(samples)
    return _accuracy(np.array([predict(weights, item) for item in scored]), samples)


def attention_group(
    dataset: Dataset, cfg: TrainConfig, table: AblationTable
) -> TwoStreamModel:
    """Fill the attention rows; returns the STA two-stream model."""
    test = dataset.test
    uniform = FusionWeights.uniform(dataset.num_classes)
    sta: TwoStreamModel | None = None
    rows: dict[str, list[tuple[str, float]]] = {name: [] for name in STREAM_NAMES}
    for suffix, (sa, ta) in ATTENTION_VARIANTS.items():
        variant_cfg = replace(cfg, spatial_attention=sa, temporal_attention=ta)
        static, _ = train_stream(
            dataset.train, 'static', variant_cfg, dataset.num_classes, dataset.val
        )
        motion, _ = train_stream(
            dataset.train, 'motion', variant_cfg, dataset.num_classes, dataset.val
        )
        model = TwoStreamModel(static, motion)
        scored = model.stream_scores(test)
        rows['static'].append(
            (suffix, _accuracy(np.array([np.argmax(s.S[0]) for s in scored]), test))
        )
        rows['motion'].append(
            (suffix, _accuracy(np.array([np.argmax(s.S[1]) for s in scored]), test))
        )
        rows['two-stream'].append(
            (suffix, _accuracy(np.array([predict(uniform, s) for s in scored]), test))
        )
        if sa and ta:
            sta = model
    for stream, name in STREAM_NAMES.items():
        for suffix, acc in rows[stream]:
            table.add('attention', name + suffix, acc)
    assert sta is not None
    return sta


def collaboration_groups(
    dataset: Dataset, cfg: TrainConfig, sta: TwoStreamModel, table: AblationTable
) -> None:
    """Fill the collaboration and fusion rows on top of the STA streams."""
    train, test = dataset.train, dataset.test
    uniform = FusionWeights.uniform(dataset.num_classes)

    table.add('collaboration', 'Two-stream+STA', _fused_accuracy(sta, uniform, test))
    awl = learn_weights(sta.stream_scores(train), cfg.lam, cfg.epsilon)
    table.add('collaboration', 'Two-stream+STA+AWL', _fused_accuracy(sta, awl, test))

    collab, _ = train_collaborative(
        train, sta.static, sta.motion, cfg, dataset.num_classes, dataset.val
    )
    cln = TwoStreamModel(sta.static, sta.motion, collab)
    late = _fused_accuracy(cln, uniform, test)
    table.add('collaboration', 'Two-stream+STA+CLN', late)
    cln_awl = learn_weights(cln.stream_scores(train), cfg.lam, cfg.epsilon)
    adaptive = _fused_accuracy(cln, cln_awl, test)
    table.add('collaboration', 'Two-stream+STA+CLN+AWL', adaptive)

    train_static, train_motion = cln.features(train)
    head = early_fusion_train(
        train_static, train_motion, _labels(train), dataset.num_classes, cfg
    )
    test_static, test_motion = cln.features(test)
    early = _accuracy(early_fusion_predict(head, test_static, test_motion), test)
    table.add('fusion', 'Late fusion', late)
    table.add('fusion', 'Early fusion', early)
    table.add('fusion', 'Adaptive fusion', adaptive)


def ablation_suite(dataset: Dataset, cfg: TrainConfig) -> AblationTable:
    if not dataset.test:
        raise NoTestDataError('ablation needs a test split')
    table = AblationTable(config=cfg.to_dict())
    sta = attention_group(dataset, cfg, table)
    collaboration_groups(dataset, cfg, sta, table)
    return table
