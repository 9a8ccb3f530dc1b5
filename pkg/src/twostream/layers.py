from collections.abc import Mapping
from dataclasses import dataclass, fields
from typing import Self

import numpy as np

from twostream.errors import ShapeMismatchError
from twostream.tensor import Array, Tensor, softmax


class ParameterSet:
    """
    Mixin for dataclasses whose `Tensor` fields are learnable parameters.

    Nested `ParameterSet` fields are walked recursively and named with a
    dotted prefix, e.g. `spatial.cam_kernels`.
    """

    def named_parameters(self, prefix: str = '') -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for f in fields(self):  # type: ignore[arg-type]
            value = getattr(self, f.name)
            if isinstance(value, Tensor):
                named[prefix + f.name] = value
            elif isinstance(value, ParameterSet):
                named.update(value.named_parameters(f'{prefix}{f.name}.'))
        return named

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state(self) -> dict[str, Array]:
        return {name: p.numpy() for name, p in self.named_parameters().items()}

    def load_state(self, state: Mapping[str, Array]) -> None:
        for name, param in self.named_parameters().items():
            if name not in state:
                raise ShapeMismatchError(f'missing parameter {name}')
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ShapeMismatchError(
                    f'{name}: stored {value.shape}, expected {param.shape}'
                )
            param.data = value.copy()

    def set_trainable(self, trainable: bool) -> None:
        for param in self.parameters():
            param.requires_grad = trainable
            param.grad = None


def uniform(rng: np.random.Generator, shape: tuple[int, ...], scale: float) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class LinearHead(ParameterSet):
    """Linear layer followed by a softmax over classes."""

    weight: Tensor
    """(in_features, num_classes)"""
    bias: Tensor
    """(num_classes,)"""

    @classmethod
    def initialize(
        cls, rng: np.random.Generator, in_features: int, num_classes: int
    ) -> Self:
        return cls(
            weight=uniform(rng, (in_features, num_classes), 1.0 / np.sqrt(in_features)),
            bias=zeros((num_classes,)),
        )

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    def logits(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeMismatchError(
                f'head expects {self.weight.shape[0]} features, got {x.shape[-1]}'
            )
        return x @ self.weight + self.bias

    def __call__(self, x: Tensor) -> Tensor:
        return softmax(self.logits(x), axis=-1)
