"""
Central finite-difference checks of every differentiable primitive and of
the spatial, temporal and collaborative chains.
"""
import logging

from collections.abc import Callable
from dataclasses import replace

import numpy as np

from twostream.collaborative import CollabModel, StreamFeatures
from twostream.layers import LinearHead
from twostream.spatial import (
    ActivationGrid,
    SpatialHead,
    cam_activations,
    class_maps,
    normalize_attention,
    weighted_pool,
)
from twostream.temporal import (
    LSTMParams,
    affinity,
    attend_features,
    lstm_forward,
    temporal_heads,
    temporal_scores,
)
from twostream.tensor import (
    Tensor,
    concat,
    conv2d_3x3,
    cross_entropy,
    finite_diff_check,
    softmax,
    stack,
    transpose,
)

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
EPS = 1e-5

type Check = Callable[[np.random.Generator], float]


def _projection(
    rng: np.random.Generator, shape: tuple[int, ...]
) -> Callable[[Tensor], Tensor]:
    """Reduce a tensor to a scalar through a fixed random linear functional."""
    weights = rng.normal(size=shape)
    return lambda y: (y * weights).sum()


def _primitive(
    op: Callable[[Tensor], Tensor], shape: tuple[int, ...], scale: float = 1.0
) -> Check:
    def check(rng: np.random.Generator) -> float:
        x = Tensor(rng.normal(scale=scale, size=shape))
        project = _projection(rng, op(x).shape)
        return finite_diff_check(lambda t: project(op(t)), x, EPS)

    return check


def _binary(
    op: Callable[[Tensor, Tensor], Tensor], a_shape: tuple[int, ...], b_shape: tuple[int, ...]
) -> Check:
    def check(rng: np.random.Generator) -> float:
        a = Tensor(rng.normal(size=a_shape))
        b = Tensor(rng.normal(size=b_shape))
        project = _projection(rng, op(a, b).shape)
        return max(
            finite_diff_check(lambda t: project(op(t, b)), a, EPS),
            finite_diff_check(lambda t: project(op(a, t)), b, EPS),
        )

    return check


def _cross_entropy(rng: np.random.Generator) -> float:
    logits = Tensor(rng.normal(size=(4, 5)))
    labels = rng.integers(0, 5, size=4)
    return finite_diff_check(lambda t: cross_entropy(softmax(t), labels), logits, EPS)


def _conv(rng: np.random.Generator) -> float:
    x = Tensor(rng.normal(size=(2, 4, 3, 3)))
    kernels = Tensor(rng.normal(scale=0.3, size=(3, 3, 3, 2)))
    bias = Tensor(rng.normal(size=2))
    project = _projection(rng, (2, 4, 3, 2))
    return max(
        finite_diff_check(lambda t: project(conv2d_3x3(t, kernels, bias)), x, EPS),
        finite_diff_check(lambda t: project(conv2d_3x3(x, t, bias)), kernels, EPS),
        finite_diff_check(lambda t: project(conv2d_3x3(x, kernels, t)), bias, EPS),
    )


def _spatial_chain(rng: np.random.Generator) -> float:
    """conv -> CAM -> normalized map -> weighted pool -> head -> CE."""
    channels, num_classes = 3, 4
    head = SpatialHead.initialize(rng, channels, 4, num_classes)
    classifier = LinearHead.initialize(rng, channels, num_classes)
    frames = Tensor(rng.normal(size=(2, 3, 3, channels)))
    labels = rng.integers(0, num_classes, size=2)

    def loss(x: Tensor, spatial: SpatialHead) -> Tensor:
        grid = ActivationGrid(x)
        cam = cam_activations(grid, spatial)
        attention = normalize_attention(class_maps(cam, spatial, labels), labels)
        return cross_entropy(classifier(weighted_pool(grid, attention)), labels)

    return max(
        finite_diff_check(lambda t: loss(t, head), frames, EPS),
        finite_diff_check(
            lambda t: loss(frames, replace(head, cam_kernels=t)), head.cam_kernels, EPS
        ),
        finite_diff_check(
            lambda t: loss(frames, replace(head, classifier_weights=t)),
            head.classifier_weights,
            EPS,
        ),
    )


def _temporal_chain(rng: np.random.Generator) -> float:
    """LSTM -> affinity -> column sums -> attended features -> heads -> CE."""
    dim, hidden, num_classes = 3, 4, 3
    lstm = LSTMParams.initialize(rng, dim, hidden)
    feature_head = LinearHead.initialize(rng, dim, num_classes)
    lstm_head = LinearHead.initialize(rng, hidden, num_classes)
    seq = Tensor(rng.normal(size=(2, 5, dim)))
    labels = rng.integers(0, num_classes, size=2)

    def loss(x: Tensor, params: LSTMParams) -> Tensor:
        H = lstm_forward(x, params)
        attended = attend_features(x, temporal_scores(affinity(H)))
        p_feature, p_lstm = temporal_heads(attended.pooled, H, feature_head, lstm_head)
        return cross_entropy(p_feature, labels) + cross_entropy(p_lstm, labels)

    return max(
        finite_diff_check(lambda t: loss(t, lstm), seq, EPS),
        finite_diff_check(
            lambda t: loss(seq, replace(lstm, input_weights=t)), lstm.input_weights, EPS
        ),
        finite_diff_check(
            lambda t: loss(seq, replace(lstm, recurrent_weights=t)),
            lstm.recurrent_weights,
            EPS,
        ),
    )


def _collaborative_chain(rng: np.random.Generator) -> float:
    """Two unrolled guidance rounds -> both heads -> CE."""
    dim_s, dim_m, num_classes = 3, 4, 3
    model = CollabModel.initialize(rng, dim_s, dim_m, 3, num_classes, rounds=2)
    V_s = Tensor(rng.normal(size=(2, dim_s, 4)))
    V_m = Tensor(rng.normal(size=(2, dim_m, 4)))
    labels = rng.integers(0, num_classes, size=2)

    def loss(v_s: Tensor, v_m: Tensor, m: CollabModel) -> Tensor:
        _, p_static, p_motion = m.forward(
            StreamFeatures(v_s, 'static'), StreamFeatures(v_m, 'motion'), tolerance=0.0
        )
        return cross_entropy(p_static, labels) + cross_entropy(p_motion, labels)

    motion_params = model.pair.motion
    return max(
        finite_diff_check(lambda t: loss(t, V_m, model), V_s, EPS),
        finite_diff_check(lambda t: loss(V_s, t, model), V_m, EPS),
        finite_diff_check(
            lambda t: loss(
                V_s, V_m,
                replace(model, pair=replace(model.pair, motion=replace(motion_params, W_o=t))),
            ),
            motion_params.W_o,
            EPS,
        ),
    )


CHECKS: dict[str, Check] = {
    'add': _binary(lambda a, b: a + b, (3, 4), (4,)),
    'sub': _binary(lambda a, b: a - b, (3, 4), (3, 1)),
    'mul': _binary(lambda a, b: a * b, (2, 3, 4), (3, 4)),
    'matmul': _binary(lambda a, b: a @ b, (2, 3, 4), (4, 5)),
    'exp': _primitive(lambda a: a.exp(), (3, 4)),
    'tanh': _primitive(lambda a: a.tanh(), (3, 4)),
    'sigmoid': _primitive(lambda a: a.sigmoid(), (3, 4)),
    'sum': _primitive(lambda a: a.sum(axis=1), (3, 4, 2)),
    'mean': _primitive(lambda a: a.mean(axis=(0, 2)), (3, 4, 2)),
    'reshape': _primitive(lambda a: a.reshape(4, 6).tanh(), (2, 3, 4)),
    'transpose': _primitive(lambda a: transpose(a, (2, 0, 1)).tanh(), (2, 3, 4)),
    'index': _primitive(lambda a: a[:, 1:3] * a[:, [0, 0]], (2, 3, 4)),
    'concat': _binary(lambda a, b: concat([a, b], axis=-1).tanh(), (2, 3), (2, 4)),
    'stack': _binary(lambda a, b: stack([a, b], axis=1).tanh(), (2, 3), (2, 3)),
    'softmax': _primitive(lambda a: softmax(a, axis=-1), (3, 5), scale=2.0),
    'cross_entropy': _cross_entropy,
    'conv2d_3x3': _conv,
    'spatial_chain': _spatial_chain,
    'temporal_chain': _temporal_chain,
    'collaborative_chain': _collaborative_chain,
}


def run_gradient_suite(
    seed: int = 1, checks: dict[str, Check] | None = None
) -> dict[str, float]:
    """Worst relative error of every check, each with its own seeded generator."""
    results: dict[str, float] = {}
    for offset, (name, check) in enumerate((checks or CHECKS).items()):
        results[name] = check(np.random.default_rng([seed, offset]))
        logger.debug('gradcheck %s: %.3g', name, results[name])
    return results


def failures(results: dict[str, float], tolerance: float = TOLERANCE) -> list[str]:
    return sorted(name for name, err in results.items() if not err <= tolerance)
