import logging

from collections.abc import Iterator, Mapping

import numpy as np

from twostream.config import TrainConfig
from twostream.errors import ShapeMismatchError
from twostream.tensor import Array, Tensor

logger = logging.getLogger(__name__)


def sgd_step(
    params: Mapping[str, Array],
    grads: Mapping[str, Array | None],
    velocity: Mapping[str, Array],
    cfg: TrainConfig,
    learning_rate: float | None = None,
) -> tuple[dict[str, Array], dict[str, Array]]:
    """
    v <- momentum * v - lr * (g + weight_decay * p); p <- p + v

    A missing gradient counts as zero. Returns fresh (params, velocity).
    """
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    new_params: dict[str, Array] = {}
    new_velocity: dict[str, Array] = {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else g
        v = velocity.get(name)
        v = np.zeros_like(p) if v is None else v
        if g.shape != p.shape or v.shape != p.shape:
            raise ShapeMismatchError(
                f'{name}: param {p.shape}, grad {g.shape}, velocity {v.shape}'
            )
        v = cfg.momentum * v - lr * (g + cfg.weight_decay * p)
        new_velocity[name] = v
        new_params[name] = p + v
    return new_params, new_velocity


class Sgd:
    """Momentum SGD with weight decay over named `Tensor` parameters."""

    def __init__(self, params: Mapping[str, Tensor], cfg: TrainConfig) -> None:
        self.params = dict(params)
        self.cfg = cfg
        self.learning_rate = cfg.learning_rate
        self.velocity: dict[str, Array] = {
            name: np.zeros_like(p.data) for name, p in self.params.items()
        }

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        values, self.velocity = sgd_step(
            {name: p.data for name, p in self.params.items()},
            {name: p.grad for name, p in self.params.items()},
            self.velocity,
            self.cfg,
            self.learning_rate,
        )
        for name, p in self.params.items():
            p.data = values[name]

    def drop_learning_rate(self, factor: float) -> None:
        self.learning_rate /= factor
        logger.info('learning rate dropped to %.3g', self.learning_rate)


def minibatches(
    rng: np.random.Generator, count: int, batch_size: int, iterations: int
) -> Iterator[np.ndarray]:
    """Yield `iterations` index batches, reshuffling after every epoch."""
    order = rng.permutation(count)
    cursor = 0
    for _ in range(iterations):
        if cursor >= count:
            order = rng.permutation(count)
            cursor = 0
        yield order[cursor:cursor + batch_size]
        cursor += batch_size
