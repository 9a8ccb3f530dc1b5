"""
Temporal-level attention over LSTM hidden states.

Frame features alpha_1..alpha_T run through an LSTM; the affinity of every
frame pair, tanh(H^T H), is summed column-wise into per-frame relevance
gamma, whose softmax re-weights the frame features.
"""
import logging

from dataclasses import dataclass
from typing import NamedTuple, Self

import numpy as np

from twostream.errors import ShapeMismatchError
from twostream.layers import LinearHead, ParameterSet, uniform
from twostream.tensor import Array, Tensor, softmax, stack, swap_last

logger = logging.getLogger(__name__)

INIT_SCALE = 0.08
FORGET_BIAS = 1.0


@dataclass
class LSTMParams(ParameterSet):
    """Gate blocks are laid out as [input, forget, output, candidate]."""

    input_weights: Tensor
    """(D, 4n)"""
    recurrent_weights: Tensor
    """(n, 4n)"""
    bias: Tensor
    """(4n,)"""

    @classmethod
    def initialize(cls, rng: np.random.Generator, input_size: int, hidden_size: int) -> Self:
        n = hidden_size
        bias = rng.uniform(-INIT_SCALE, INIT_SCALE, size=4 * n)
        bias[n:2 * n] = FORGET_BIAS
        return cls(
            input_weights=uniform(rng, (input_size, 4 * n), INIT_SCALE),
            recurrent_weights=uniform(rng, (n, 4 * n), INIT_SCALE),
            bias=Tensor(bias, requires_grad=True),
        )

    @property
    def input_size(self) -> int:
        return self.input_weights.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.recurrent_weights.shape[0]


class TemporalAttention(NamedTuple):
    gamma: Tensor
    """Column sums of the affinity matrix, (..., T)"""
    weights: Tensor
    """softmax(gamma), (..., T)"""


class AttendedFeatures(NamedTuple):
    betas: Tensor
    """Per-frame attended features, (..., T, D)"""
    pooled: Tensor
    """sum of betas over time, (..., D)"""
    attention: TemporalAttention


def lstm_forward(seq: Tensor, params: LSTMParams) -> Tensor:
    """
    Run the LSTM over a (..., T, D) sequence from zero state.

    Returns the stacked hidden states H of shape (..., n, T).
    """
    if seq.ndim < 2 or seq.shape[-1] != params.input_size:
        raise ShapeMismatchError(
            f'sequence {seq.shape} for LSTM input size {params.input_size}'
        )
    n = params.hidden_size
    lead = seq.shape[:-2]
    h = Tensor(np.zeros(lead + (n,)))
    c = Tensor(np.zeros(lead + (n,)))
    states: list[Tensor] = []
    for t in range(seq.shape[-2]):
        z = seq[..., t, :] @ params.input_weights + h @ params.recurrent_weights + params.bias
        i = z[..., 0:n].sigmoid()
        f = z[..., n:2 * n].sigmoid()
        o = z[..., 2 * n:3 * n].sigmoid()
        candidate = z[..., 3 * n:].tanh()
        c = f * c + i * candidate
        h = o * c.tanh()
        states.append(h)
    return stack(states, axis=-1)


def affinity(H: Tensor) -> Tensor:
    """C = tanh(H^T H), shape (..., T, T)."""
    gram = swap_last(H) @ H
    # exact symmetry independent of BLAS accumulation order
    gram = (gram + swap_last(gram)) * 0.5
    return gram.tanh()


def temporal_scores(C: Tensor) -> Tensor:
    """gamma_j = sum_i C_ij."""
    if C.ndim < 2 or C.shape[-1] != C.shape[-2]:
        raise ShapeMismatchError(f'affinity matrix of shape {C.shape}')
    return C.sum(axis=-2)


def attend_features(seq: Tensor, gamma: Tensor) -> AttendedFeatures:
    """beta_i = alpha_i * softmax(gamma)_i and their sum over frames."""
    if seq.shape[:-1] != gamma.shape:
        raise ShapeMismatchError(f'sequence {seq.shape} with gamma {gamma.shape}')
    weights = softmax(gamma, axis=-1)
    betas = seq * weights.reshape(*weights.shape, 1)
    return AttendedFeatures(betas, betas.sum(axis=-2), TemporalAttention(gamma, weights))


def uniform_scores(seq: Tensor) -> Tensor:
    """Constant gamma, giving every frame weight 1/T."""
    return Tensor(np.zeros(seq.shape[:-1]))


def temporal_heads(
    pooled: Tensor, H: Tensor, feature_head: LinearHead, lstm_head: LinearHead
) -> tuple[Tensor, Tensor]:
    """Class probabilities from the pooled attended feature and from h_T."""
    return feature_head(pooled), lstm_head(H[..., -1])


def segment_bounds(num_frames: int, num_segments: int) -> list[tuple[int, int]]:
    chunks = np.array_split(np.arange(num_frames), num_segments)
    return [(int(chunk[0]), int(chunk[-1]) + 1) for chunk in chunks]


def segment_features(betas: Tensor, num_segments: int) -> Tensor:
    """
    Mean-pool (..., T, D) attended frames into N = min(T, num_segments)
    uniform temporal chunks, returned column-wise as (..., D, N).
    """
    num_frames = betas.shape[-2]
    n = min(num_frames, num_segments)
    segments = [
        betas[..., lo:hi, :].mean(axis=-2) for lo, hi in segment_bounds(num_frames, n)
    ]
    return stack(segments, axis=-1)


def planted_mass(weights: Array, planted_frames: tuple[int, ...]) -> float:
    """Share of temporal softmax mass falling on the planted frames."""
    return float(np.sum(weights[list(planted_frames)]))
