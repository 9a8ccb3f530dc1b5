from pathlib import Path
from unittest.mock import Mock

import numpy as np
import pytest

from twostream.cache import region
from twostream.config import TrainConfig
from twostream.common import Dataset
from twostream.manifest import save_dataset
from twostream.synthetic import SyntheticConfig, generate_synthetic


@pytest.fixture(autouse=True, scope='session')
def _configure_region():
    region.configure('dogpile.cache.null', replace_existing_backend=True)
    region.configure = Mock()  # type: ignore[method-assign]


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture()
def small_synthetic() -> SyntheticConfig:
    """A few videos per class, enough for end-to-end plumbing."""
    return SyntheticConfig(
        num_classes=3,
        train_per_class=4,
        test_per_class=2,
        frames=4,
        grid_height=3,
        grid_width=3,
        channels=4,
        signal_frames=2,
        block=2,
        seed=7,
    )


@pytest.fixture()
def small_dataset(small_synthetic: SyntheticConfig) -> Dataset:
    return generate_synthetic(small_synthetic)


@pytest.fixture()
def quick_config() -> TrainConfig:
    """Tiny networks and few iterations."""
    return TrainConfig(
        learning_rate=0.05,
        batch_size=4,
        max_iterations=6,
        eval_every=3,
        hidden_size=4,
        cam_channels=4,
        collab_hidden=3,
        segments=2,
    )


@pytest.fixture()
def benchmark_config() -> TrainConfig:
    return TrainConfig(learning_rate=0.05, max_iterations=400)


@pytest.fixture()
def written_dataset(tmp_path: Path, small_dataset: Dataset) -> Path:
    return save_dataset(tmp_path / 'data', small_dataset)
