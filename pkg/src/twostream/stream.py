"""
One stream of the spatial-temporal attention network.

Per frame: CAM_conv over the activation grid, spatial logits through GAP,
a normalized class activation map weighting the pooling of the grid. Per
video: an LSTM over the pooled frames, affinity-based temporal attention
and two classification heads.
"""
from dataclasses import dataclass
from typing import NamedTuple, Self

import numpy as np

from twostream.common import StreamTag
from twostream.config import TrainConfig
from twostream.layers import LinearHead, ParameterSet
from twostream.spatial import (
    ActivationGrid,
    AttentionMap,
    SpatialHead,
    cam_activations,
    class_maps,
    normalize_attention,
    select_classes,
    spatial_forward,
    uniform_attention,
    weighted_pool,
)
from twostream.temporal import (
    AttendedFeatures,
    LSTMParams,
    affinity,
    attend_features,
    lstm_forward,
    temporal_heads,
    temporal_scores,
    uniform_scores,
)
from twostream.tensor import Tensor, cross_entropy, softmax


class StreamOutput(NamedTuple):
    spatial_logits: Tensor
    """(B, T, C)"""
    attention: AttentionMap
    """Spatial attention, (B, T, h, w)"""
    alphas: Tensor
    """Weighted-pooling frame features, (B, T, D)"""
    H: Tensor
    """LSTM hidden states, (B, n, T)"""
    attended: AttendedFeatures
    p_feature: Tensor
    """Head over the pooled attended feature, (B, C)"""
    p_lstm: Tensor
    """Head over the final hidden state, (B, C)"""

    @property
    def scores(self) -> Tensor:
        """The stream's classification score: mean of the two heads."""
        return (self.p_feature + self.p_lstm) * 0.5


@dataclass
class StreamModel(ParameterSet):
    spatial: SpatialHead
    lstm: LSTMParams
    feature_head: LinearHead
    lstm_head: LinearHead
    stream_tag: StreamTag = 'static'
    spatial_attention: bool = True
    temporal_attention: bool = True

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        stream_tag: StreamTag,
        channels: int,
        num_classes: int,
        cfg: TrainConfig,
    ) -> Self:
        return cls(
            spatial=SpatialHead.initialize(rng, channels, cfg.cam_channels, num_classes),
            lstm=LSTMParams.initialize(rng, channels, cfg.hidden_size),
            feature_head=LinearHead.initialize(rng, channels, num_classes),
            lstm_head=LinearHead.initialize(rng, cfg.hidden_size, num_classes),
            stream_tag=stream_tag,
            spatial_attention=cfg.spatial_attention,
            temporal_attention=cfg.temporal_attention,
        )

    @property
    def num_classes(self) -> int:
        return self.spatial.num_classes

    @property
    def feature_dim(self) -> int:
        return self.lstm.input_size

    def forward(self, frames: Tensor, labels: np.ndarray | None = None) -> StreamOutput:
        """
        frames: (B, T, h, w, K). With `labels` the ground-truth class drives
        the attention maps, otherwise each frame's argmax class does.
        """
        grid = ActivationGrid(frames, self.stream_tag)
        cam = cam_activations(grid, self.spatial)
        spatial_logits = spatial_forward(cam, self.spatial)

        if self.spatial_attention:
            classes = select_classes(spatial_logits, labels)
            attention = normalize_attention(
                class_maps(cam, self.spatial, classes), classes
            )
        else:
            attention = uniform_attention(grid)
        alphas = weighted_pool(grid, attention)

        H = lstm_forward(alphas, self.lstm)
        gamma = (
            temporal_scores(affinity(H)) if self.temporal_attention
            else uniform_scores(alphas)
        )
        attended = attend_features(alphas, gamma)
        p_feature, p_lstm = temporal_heads(
            attended.pooled, H, self.feature_head, self.lstm_head
        )
        return StreamOutput(
            spatial_logits, attention, alphas, H, attended, p_feature, p_lstm
        )

    def loss(self, output: StreamOutput, labels: np.ndarray) -> Tensor:
        """Equal-weighted spatial, feature-output and LSTM cross-entropies."""
        labels = np.asarray(labels, dtype=np.int64)
        num_frames = output.spatial_logits.shape[-2]
        spatial = cross_entropy(
            softmax(output.spatial_logits, axis=-1), np.repeat(labels, num_frames)
        )
        return (
            spatial
            + cross_entropy(output.p_feature, labels)
            + cross_entropy(output.p_lstm, labels)
        )
