import json
import logging

from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Self

from twostream.errors import BadConfigError, MissingFileError

logger = logging.getLogger(__name__)


def _coerce(name: str, value: Any, kind: Any) -> Any:
    try:
        if kind is bool and isinstance(value, str):
            lowered = value.strip().lower()
            if lowered not in ('true', 'false', '1', '0', 'yes', 'no'):
                raise ValueError(value)
            return lowered in ('true', '1', 'yes')
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        if kind in (bool, int, float, str):
            return kind(value)
    except (TypeError, ValueError) as e:
        raise BadConfigError(f'{name}: cannot read {value!r} as {kind.__name__}') from e
    return value


class ConfigMixin:
    """
    Dataclass configs: loosely typed JSON values are coerced to the field
    types, then `validate` checks ranges.
    """

    def __post_init__(self):
        for f in fields(self):  # type: ignore[arg-type]
            setattr(self, f.name, _coerce(f.name, getattr(self, f.name), f.type))
        self.validate()

    def validate(self) -> None:
        pass

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)  # type: ignore[call-overload]

    @classmethod
    def load(
        cls, path: Path | str | None = None, overrides: Mapping[str, Any] | None = None
    ) -> Self:
        """Defaults < JSON config file < explicit overrides."""
        known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
        values: dict[str, Any] = {}
        if path is not None:
            values.update(read_config_file(path))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        unknown = sorted(set(values) - known)
        if unknown:
            logger.warning('ignoring unknown %s keys: %s', cls.__name__, ', '.join(unknown))
        return cls(**{k: v for k, v in values.items() if k in known})


def read_config_file(path: Path | str) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(str(path))
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise BadConfigError(f'{path}: {e}') from e
    if not isinstance(data, dict):
        raise BadConfigError(f'{path}: expected a JSON object')
    return data


def require(condition: bool, message: str) -> None:
    if not condition:
        raise BadConfigError(message)


@dataclass
class TrainConfig(ConfigMixin):
    learning_rate: float = field(
        default=0.001, metadata={"description": "Initial SGD learning rate."}
    )
    momentum: float = field(default=0.9, metadata={"description": "SGD momentum."})
    weight_decay: float = field(
        default=0.0001, metadata={"description": "L2 penalty folded into the gradient."}
    )
    batch_size: int = field(default=16, metadata={"description": "Videos per minibatch."})
    max_iterations: int = field(
        default=600, metadata={"description": "SGD iterations per training stage."}
    )
    lr_drop_factor: float = field(
        default=10.0,
        metadata={"description": "Divisor applied when validation accuracy saturates."},
    )
    patience: int = field(
        default=200,
        metadata={"description": "Iterations without improvement before a drop."},
    )
    max_lr_drops: int = field(
        default=2, metadata={"description": "Upper bound on learning-rate drops."}
    )
    eval_every: int = field(
        default=50, metadata={"description": "Iterations between validation checks."}
    )
    seed: int = field(default=1, metadata={"description": "Seed of every generator."})
    hidden_size: int = field(
        default=32, metadata={"description": "LSTM hidden units (512 at full scale)."}
    )
    cam_channels: int = field(
        default=16, metadata={"description": "CAM_conv output channels (1024 at full scale)."}
    )
    collab_hidden: int = field(
        default=16, metadata={"description": "Hidden size k of the guidance projections."}
    )
    segments: int = field(
        default=8, metadata={"description": "Segment count N is min(T, segments)."}
    )
    unroll_rounds: int = field(
        default=2, metadata={"description": "Collaborative rounds unrolled per video."}
    )
    lam: float = field(
        default=5e-3,
        metadata={"description": "Balance of negative samples in fusion learning."},
    )
    epsilon: float = field(
        default=0.0, metadata={"description": "Floor on each fusion weight."}
    )
    spatial_attention: bool = field(
        default=True, metadata={"description": "Use spatial-level attention."}
    )
    temporal_attention: bool = field(
        default=True, metadata={"description": "Use temporal-level attention."}
    )
    finetune_streams: bool = field(
        default=False,
        metadata={"description": "Keep training stream models in the collaborative stage."},
    )

    def validate(self) -> None:
        require(self.learning_rate > 0, 'learning_rate must be positive')
        require(0 <= self.momentum < 1, 'momentum must lie in [0, 1)')
        require(self.weight_decay >= 0, 'weight_decay must be nonnegative')
        require(self.lr_drop_factor >= 1, 'lr_drop_factor must be at least 1')
        require(self.lam >= 0, 'lam must be nonnegative')
        require(0 <= self.epsilon < 0.5, 'epsilon must lie in [0, 0.5)')
        for name in (
            'batch_size', 'max_iterations', 'patience', 'eval_every',
            'hidden_size', 'cam_channels', 'collab_hidden', 'segments',
            'unroll_rounds',
        ):
            require(getattr(self, name) >= 1, f'{name} must be positive')
        require(self.max_lr_drops >= 0, 'max_lr_drops must be nonnegative')
