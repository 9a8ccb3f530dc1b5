"""
Spatial-level attention: class activation maps over the CAM_conv grid,
their normalization to a saliency map that sums to the cell count g, and
the attention-weighted pooling of the frame features.

Grids are (..., h, w, K) tensors; any leading axes (batch, time) ride along.
"""
from dataclasses import dataclass
from typing import Self

import numpy as np

from twostream.common import StreamTag
from twostream.errors import BadClassError, ShapeMismatchError
from twostream.layers import ParameterSet, uniform, zeros
from twostream.tensor import (
    Tensor,
    conv2d_3x3,
    reshape,
    softmax,
    spatial_mean,
)


@dataclass(frozen=True)
class ActivationGrid:
    cells: Tensor
    """Activations a_k(x, y), shape (..., h, w, K)"""
    stream_tag: StreamTag = 'static'

    def __post_init__(self):
        if self.cells.ndim < 3:
            raise ShapeMismatchError(f'activation grid of shape {self.cells.shape}')

    @property
    def grid_shape(self) -> tuple[int, int]:
        h, w = self.cells.shape[-3:-1]
        return h, w

    @property
    def g(self) -> int:
        h, w = self.grid_shape
        return h * w

    @property
    def channels(self) -> int:
        return self.cells.shape[-1]


@dataclass(frozen=True)
class AttentionMap:
    values: Tensor
    """Normalized saliency m~(x, y), shape (..., h, w); sums to g per map"""
    class_id: int | np.ndarray | None = None
    """Category (or per-map categories) the map was computed for"""


@dataclass
class SpatialHead(ParameterSet):
    cam_kernels: Tensor
    """CAM_conv kernels, (3, 3, K, K_cam)"""
    cam_bias: Tensor
    """(K_cam,)"""
    classifier_weights: Tensor
    """w_k^c, (K_cam, C)"""
    classifier_bias: Tensor
    """(C,)"""

    @classmethod
    def initialize(
        cls, rng: np.random.Generator, channels: int, cam_channels: int, num_classes: int
    ) -> Self:
        return cls(
            cam_kernels=uniform(
                rng, (3, 3, channels, cam_channels), 1.0 / np.sqrt(9 * channels)
            ),
            cam_bias=zeros((cam_channels,)),
            classifier_weights=uniform(
                rng, (cam_channels, num_classes), 1.0 / np.sqrt(cam_channels)
            ),
            classifier_bias=zeros((num_classes,)),
        )

    @property
    def num_classes(self) -> int:
        return self.classifier_weights.shape[1]

    def _check_channels(self, grid: ActivationGrid) -> None:
        if grid.channels != self.classifier_weights.shape[0]:
            raise ShapeMismatchError(
                f'grid has {grid.channels} channels, '
                f'classifier expects {self.classifier_weights.shape[0]}'
            )


def cam_activations(grid: ActivationGrid, head: SpatialHead) -> ActivationGrid:
    """The CAM_conv layer: 3x3 convolution producing the a_k grid."""
    return ActivationGrid(
        conv2d_3x3(grid.cells, head.cam_kernels, head.cam_bias), grid.stream_tag
    )


def cam_maps(grid: ActivationGrid, head: SpatialHead) -> Tensor:
    """m_c(x, y) for every category at once, shape (..., h, w, C)."""
    head._check_channels(grid)
    return grid.cells @ head.classifier_weights


def cam_map(grid: ActivationGrid, head: SpatialHead, c: int) -> tuple[Tensor, Tensor]:
    """Raw map m_c of one category and its score s_c, the sum over cells."""
    if not 0 <= c < head.num_classes:
        raise BadClassError(f'class {c} outside [0, {head.num_classes})')
    m = cam_maps(grid, head)[..., c]
    return m, m.sum(axis=(-2, -1))


def class_maps(grid: ActivationGrid, head: SpatialHead, classes: np.ndarray) -> Tensor:
    """
    Select one raw map per (h, w) slice of the grid.

    `classes` holds an int category for every leading index of the grid.
    """
    classes = np.asarray(classes, dtype=np.int64)
    if classes.shape != grid.cells.shape[:-3]:
        raise ShapeMismatchError(
            f'classes {classes.shape} for grid {grid.cells.shape}'
        )
    if np.any(classes < 0) or np.any(classes >= head.num_classes):
        raise BadClassError(f'classes outside [0, {head.num_classes})')
    onehot = np.eye(head.num_classes)[classes]
    mask = onehot.reshape(classes.shape + (1, 1, head.num_classes))
    return (cam_maps(grid, head) * mask).sum(axis=-1)


def normalize_attention(
    m: Tensor, class_id: int | np.ndarray | None = None
) -> AttentionMap:
    """m~ = g * exp(m) / sum(exp(m)) over the (h, w) cells of each map."""
    if m.ndim < 2:
        raise ShapeMismatchError(f'attention map of shape {m.shape}')
    lead = m.shape[:-2]
    h, w = m.shape[-2:]
    g = h * w
    flat = softmax(reshape(m, lead + (g,)), axis=-1)
    return AttentionMap(reshape(flat * float(g), m.shape), class_id)


def uniform_attention(grid: ActivationGrid) -> AttentionMap:
    """All-ones map; weighted pooling with it is plain average pooling."""
    return AttentionMap(Tensor(np.ones(grid.cells.shape[:-1])))


def weighted_pool(features: ActivationGrid, attn: AttentionMap) -> Tensor:
    """(1/g) * sum over cells of m~(x, y) * f_d(x, y), shape (..., D)."""
    if attn.values.shape[-2:] != features.grid_shape:
        raise ShapeMismatchError(
            f'attention over {attn.values.shape[-2:]} cells, '
            f'features over {features.grid_shape}'
        )
    weights = reshape(attn.values, attn.values.shape + (1,))
    return spatial_mean(features.cells * weights)


def spatial_forward(grid: ActivationGrid, head: SpatialHead) -> Tensor:
    """Class logits through global average pooling and the classifier."""
    head._check_channels(grid)
    return spatial_mean(grid.cells) @ head.classifier_weights + head.classifier_bias


def select_classes(logits: Tensor, labels: np.ndarray | None = None) -> np.ndarray:
    """
    Category driving each attention map: the ground truth during training,
    the argmax of the spatial logits at inference.
    """
    lead = logits.shape[:-1]
    if labels is None:
        return np.argmax(logits.data, axis=-1)
    labels = np.asarray(labels, dtype=np.int64)
    extra = len(lead) - labels.ndim
    if extra < 0:
        raise ShapeMismatchError(f'labels {labels.shape} for logits {logits.shape}')
    return np.broadcast_to(labels.reshape(labels.shape + (1,) * extra), lead).copy()
