from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from twostream.tensor import Array


type StreamTag = Literal['static', 'motion']
"""Frame-derived (static) or optical-flow-derived (motion) stream"""

STREAMS: tuple[StreamTag, StreamTag] = ('static', 'motion')


@dataclass
class VideoSample:
    id: str
    label: int
    static_frames: Array = field(
        metadata={"description": "Static stream activation grids, shape (T, h, w, K)."}
    )
    motion_frames: Array = field(
        metadata={"description": "Motion stream activation grids, shape (T, h, w, K)."}
    )
    planted_frames: tuple[int, ...] = field(
        default=(),
        metadata={"description": "Frame indices carrying the planted class signal."},
    )
    planted_cells: tuple[int, ...] = field(
        default=(),
        metadata={"description": "Row-major grid cell indices carrying the signal."},
    )

    def __post_init__(self):
        self.static_frames = np.asarray(self.static_frames, dtype=np.float64)
        self.motion_frames = np.asarray(self.motion_frames, dtype=np.float64)
        self.planted_frames = tuple(int(i) for i in self.planted_frames)
        self.planted_cells = tuple(int(i) for i in self.planted_cells)

    @property
    def num_frames(self) -> int:
        return self.static_frames.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        _, h, w, _ = self.static_frames.shape
        return h, w

    @property
    def channels(self) -> int:
        return self.static_frames.shape[-1]

    def frames(self, stream: StreamTag) -> Array:
        return self.static_frames if stream == 'static' else self.motion_frames


@dataclass
class Dataset:
    num_classes: int
    train: list[VideoSample] = field(default_factory=list)
    val: list[VideoSample] = field(default_factory=list)
    test: list[VideoSample] = field(default_factory=list)

    def split(self, name: str) -> list[VideoSample]:
        return getattr(self, name)

    def find(self, video_id: str) -> VideoSample | None:
        for sample in (*self.train, *self.val, *self.test):
            if sample.id == video_id:
                return sample
        return None


def stack_stream(
    samples: list[VideoSample], stream: StreamTag
) -> tuple[Array, np.ndarray]:
    """Batch a stream's frames as (B, T, h, w, K) plus the (B,) label vector."""
    frames = np.stack([s.frames(stream) for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return frames, labels
