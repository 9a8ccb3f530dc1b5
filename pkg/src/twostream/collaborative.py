"""
Static-motion collaborative learning.

Each stream's segment features are re-weighted by a softmax whose scores are
conditioned on the other stream's merged video feature; the two directions
alternate, starting from uniform static coefficients.
"""
import logging

from dataclasses import dataclass
from typing import NamedTuple, Self

import numpy as np

from twostream.common import StreamTag
from twostream.errors import ShapeMismatchError
from twostream.layers import LinearHead, ParameterSet, uniform
from twostream.tensor import Tensor, reshape, softmax, swap_last

logger = logging.getLogger(__name__)

CONVERGENCE_TOLERANCE = 1e-6


@dataclass(frozen=True)
class StreamFeatures:
    V: Tensor
    """Segment features v_1..v_N as columns, (..., D, N)"""
    stream_tag: StreamTag = 'static'

    def __post_init__(self):
        if self.V.ndim < 2:
            raise ShapeMismatchError(f'stream features of shape {self.V.shape}')

    @property
    def num_segments(self) -> int:
        return self.V.shape[-1]


@dataclass
class CollabParams(ParameterSet):
    """Parameters of one guidance direction."""

    W: Tensor
    """Projection of the guided stream's segments, (k, D)"""
    W_o: Tensor
    """Projection of the guiding video feature, (k, D_guide)"""
    W_h: Tensor
    """Scoring vector, (k, 1)"""

    @classmethod
    def initialize(
        cls, rng: np.random.Generator, dim: int, guide_dim: int, hidden: int
    ) -> Self:
        return cls(
            W=uniform(rng, (hidden, dim), 1.0 / np.sqrt(dim)),
            W_o=uniform(rng, (hidden, guide_dim), 1.0 / np.sqrt(guide_dim)),
            W_h=uniform(rng, (hidden, 1), 1.0 / np.sqrt(hidden)),
        )


@dataclass
class CollabPair(ParameterSet):
    motion: CollabParams
    """Static-guided scoring of the motion segments"""
    static: CollabParams
    """Motion-guided scoring of the static segments"""


class CollabState(NamedTuple):
    z_s: Tensor
    """Static coefficients, (..., N_s) on the simplex"""
    z_m: Tensor
    """Motion coefficients, (..., N_m) on the simplex"""
    O_s: Tensor
    """Merged static video feature V_s z_s, (..., D_s)"""
    O_m: Tensor
    """Merged motion video feature V_m z_m, (..., D_m)"""
    rounds: int
    """Rounds run by the slowest video"""
    video_rounds: np.ndarray
    """Rounds run by each video, shaped like the batch"""


def guide_step(
    target: StreamFeatures, O_guide: Tensor, params: CollabParams
) -> tuple[Tensor, Tensor]:
    """
    H = tanh(W V + (W_o O) 1^T); z = softmax(W_h^T H); O' = V z.

    Returns (z, O') with z of shape (..., N) and O' of shape (..., D).
    """
    V = target.V
    if V.shape[-2] != params.W.shape[1] or O_guide.shape[-1] != params.W_o.shape[1]:
        raise ShapeMismatchError(
            f'segments {V.shape} and guide {O_guide.shape} '
            f'for W {params.W.shape}, W_o {params.W_o.shape}'
        )
    guide = params.W_o @ reshape(O_guide, O_guide.shape + (1,))
    H = (params.W @ V + guide).tanh()
    scores = swap_last(params.W_h) @ H
    z = softmax(reshape(scores, scores.shape[:-2] + scores.shape[-1:]), axis=-1)
    merged = V @ reshape(z, z.shape + (1,))
    return z, reshape(merged, merged.shape[:-1])


def _uniform_coefficients(features: StreamFeatures) -> Tensor:
    lead = features.V.shape[:-2]
    n = features.num_segments
    return Tensor(np.full(lead + (n,), 1.0 / n))


def _select(keep: np.ndarray, new: Tensor, old: Tensor) -> Tensor:
    """`new` where `keep` is 1 and `old` where it is 0, differentiable in both."""
    return new * keep + old * (1.0 - keep)


def collaborative_optimize(
    V_s: StreamFeatures,
    V_m: StreamFeatures,
    pair: CollabPair,
    max_rounds: int,
    tolerance: float = CONVERGENCE_TOLERANCE,
) -> CollabState:
    """
    Alternate static-guides-motion and motion-guides-static steps.

    Each video stops after `max_rounds` or once none of its coefficients
    moved by `tolerance` or more in a round, and keeps the last state
    computed for it. Videos in a batch converge independently, so a batched
    run equals the per-video runs.
    """
    if max_rounds < 1:
        raise ShapeMismatchError(f'max_rounds must be at least 1, got {max_rounds}')
    z_s = _uniform_coefficients(V_s)
    z_m = _uniform_coefficients(V_m)
    O_s = reshape(V_s.V @ reshape(z_s, z_s.shape + (1,)), V_s.V.shape[:-1])
    O_m = reshape(V_m.V @ reshape(z_m, z_m.shape + (1,)), V_m.V.shape[:-1])

    active = np.ones(z_s.shape[:-1], dtype=bool)
    video_rounds = np.zeros(active.shape, dtype=int)
    rounds = 0
    while rounds < max_rounds and active.any():
        rounds += 1
        new_z_m, new_O_m = guide_step(V_m, O_s, pair.motion)
        new_z_s, new_O_s = guide_step(V_s, new_O_m, pair.static)
        change = np.maximum(
            np.max(np.abs(new_z_s.data - z_s.data), axis=-1),
            np.max(np.abs(new_z_m.data - z_m.data), axis=-1),
        )
        # converged videos keep their state
        keep = active[..., np.newaxis].astype(float)
        z_s, z_m = _select(keep, new_z_s, z_s), _select(keep, new_z_m, z_m)
        O_s, O_m = _select(keep, new_O_s, O_s), _select(keep, new_O_m, O_m)
        video_rounds = video_rounds + active
        logger.debug(
            'collaborative round %d: %d active, max coefficient change %.3g',
            rounds, int(np.sum(active)), float(np.max(change)),
        )
        active = active & (change >= tolerance)

    return CollabState(z_s, z_m, O_s, O_m, rounds, video_rounds)


@dataclass
class CollabModel(ParameterSet):
    pair: CollabPair
    static_head: LinearHead
    motion_head: LinearHead
    rounds: int = 2
    """Alternation rounds unrolled per video"""
    segments: int = 8
    """Upper bound on the segment count N"""

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        static_dim: int,
        motion_dim: int,
        hidden: int,
        num_classes: int,
        rounds: int = 2,
        segments: int = 8,
    ) -> Self:
        return cls(
            pair=CollabPair(
                motion=CollabParams.initialize(rng, motion_dim, static_dim, hidden),
                static=CollabParams.initialize(rng, static_dim, motion_dim, hidden),
            ),
            static_head=LinearHead.initialize(rng, static_dim, num_classes),
            motion_head=LinearHead.initialize(rng, motion_dim, num_classes),
            rounds=rounds,
            segments=segments,
        )

    def forward(
        self,
        V_s: StreamFeatures,
        V_m: StreamFeatures,
        tolerance: float = CONVERGENCE_TOLERANCE,
    ) -> tuple[CollabState, Tensor, Tensor]:
        state = collaborative_optimize(V_s, V_m, self.pair, self.rounds, tolerance)
        p_static, p_motion = collab_heads(state, self.static_head, self.motion_head)
        return state, p_static, p_motion


def collab_heads(
    state: CollabState, static_head: LinearHead, motion_head: LinearHead
) -> tuple[Tensor, Tensor]:
    """Class probabilities from the merged static and motion features."""
    return static_head(state.O_s), motion_head(state.O_m)
