"""
Synthetic two-stream videos with planted attention ground truth.

Each video carries its class pattern inside a contiguous window of frames
and a square block of cells; everything else is zero-mean Gaussian noise.
The static signal ramps up over the window; the motion stream receives the
frame-to-frame difference of that static signal at the same locations.
"""
import logging

from dataclasses import dataclass, field

import numpy as np

from twostream.common import Dataset, VideoSample
from twostream.config import ConfigMixin, require
from twostream.tensor import Array

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')


@dataclass
class SyntheticConfig(ConfigMixin):
    num_classes: int = field(default=5, metadata={"description": "Number of categories C."})
    train_per_class: int = field(default=40, metadata={"description": "Training videos per class."})
    val_per_class: int = field(default=0, metadata={"description": "Validation videos per class."})
    test_per_class: int = field(default=20, metadata={"description": "Test videos per class."})
    frames: int = field(default=8, metadata={"description": "Frames per video T."})
    grid_height: int = field(default=4, metadata={"description": "Grid rows h'."})
    grid_width: int = field(default=4, metadata={"description": "Grid columns w'."})
    channels: int = field(default=16, metadata={"description": "Channels K per cell."})
    signal_frames: int = field(
        default=3, metadata={"description": "Length T_sig of the planted frame window."}
    )
    block: int = field(default=2, metadata={"description": "Side of the planted cell block."})
    snr: float = field(
        default=4.0, metadata={"description": "Signal RMS amplitude over noise sigma."}
    )
    noise_sigma: float = field(default=1.0, metadata={"description": "Noise standard deviation."})
    amplitude: float | None = field(
        default=None,
        metadata={"description": "Absolute signal RMS amplitude; overrides snr * noise_sigma."},
    )
    seed: int = field(default=1, metadata={"description": "Generator seed."})

    def validate(self) -> None:
        for name in (
            'num_classes', 'train_per_class', 'test_per_class', 'frames',
            'grid_height', 'grid_width', 'channels', 'block',
        ):
            require(getattr(self, name) >= 1, f'{name} must be positive')
        require(self.val_per_class >= 0, 'val_per_class must be nonnegative')
        require(1 <= self.signal_frames <= self.frames, 'signal_frames must lie in [1, frames]')
        require(
            self.block <= min(self.grid_height, self.grid_width),
            'block must fit inside the grid',
        )
        require(self.snr >= 0, 'snr must be nonnegative')
        require(self.noise_sigma >= 0, 'noise_sigma must be nonnegative')
        if self.amplitude is not None:
            self.amplitude = float(self.amplitude)
            require(self.amplitude >= 0, 'amplitude must be nonnegative')

    @property
    def signal_amplitude(self) -> float:
        if self.amplitude is not None:
            return self.amplitude
        return self.snr * self.noise_sigma

    def per_class(self, split: str) -> int:
        return getattr(self, f'{split}_per_class')


def class_patterns(rng: np.random.Generator, num_classes: int, channels: int) -> Array:
    """One unit-RMS channel pattern per class, (C, K)."""
    patterns = rng.standard_normal((num_classes, channels))
    rms = np.sqrt(np.mean(patterns ** 2, axis=1, keepdims=True))
    return patterns / rms


def ramp_envelope(signal_frames: int) -> Array:
    """Linear ramp 1..T_sig rescaled to unit RMS."""
    ramp = np.arange(1, signal_frames + 1, dtype=np.float64)
    return ramp / np.sqrt(np.mean(ramp ** 2))


def planted_signal(pattern: Array, amplitude: float, signal_frames: int) -> tuple[Array, Array]:
    """Static signal over the window and its frame difference, each (T_sig, K)."""
    static = amplitude * ramp_envelope(signal_frames)[:, None] * pattern[None, :]
    motion = np.diff(static, axis=0, prepend=0.0)
    return static, motion


def _make_video(
    rng: np.random.Generator,
    cfg: SyntheticConfig,
    video_id: str,
    label: int,
    pattern: Array,
) -> VideoSample:
    T, h, w, K = cfg.frames, cfg.grid_height, cfg.grid_width, cfg.channels
    t0 = int(rng.integers(0, T - cfg.signal_frames + 1))
    y0 = int(rng.integers(0, h - cfg.block + 1))
    x0 = int(rng.integers(0, w - cfg.block + 1))

    static = rng.normal(0.0, cfg.noise_sigma, size=(T, h, w, K))
    motion = rng.normal(0.0, cfg.noise_sigma, size=(T, h, w, K))
    static_signal, motion_signal = planted_signal(
        pattern, cfg.signal_amplitude, cfg.signal_frames
    )
    window = slice(t0, t0 + cfg.signal_frames)
    rows, cols = slice(y0, y0 + cfg.block), slice(x0, x0 + cfg.block)
    static[window, rows, cols, :] += static_signal[:, None, None, :]
    motion[window, rows, cols, :] += motion_signal[:, None, None, :]

    return VideoSample(
        id=video_id,
        label=label,
        static_frames=static,
        motion_frames=motion,
        planted_frames=tuple(range(t0, t0 + cfg.signal_frames)),
        planted_cells=tuple(
            y * w + x
            for y in range(y0, y0 + cfg.block)
            for x in range(x0, x0 + cfg.block)
        ),
    )


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """A pure function of `cfg`: same config, same videos."""
    rng = np.random.default_rng(cfg.seed)
    patterns = class_patterns(rng, cfg.num_classes, cfg.channels)
    dataset = Dataset(num_classes=cfg.num_classes)
    for split in SPLITS:
        videos = dataset.split(split)
        for label in range(cfg.num_classes):
            for i in range(cfg.per_class(split)):
                videos.append(
                    _make_video(rng, cfg, f'{split}-c{label:02d}-{i:04d}', label, patterns[label])
                )
    logger.info(
        'generated %d/%d/%d train/val/test videos over %d classes',
        len(dataset.train), len(dataset.val), len(dataset.test), cfg.num_classes,
    )
    return dataset
