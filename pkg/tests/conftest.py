"""Shared fixtures: a small phantom, its direction set and acquisition, and a tiny INR."""
import numpy as np
import pytest

from src.sainr.models import AcquisitionConfig, DirectionSet, InrConfig, TrainConfig
from src.sainr.services.phantom import HrSliceSet, acquire, build_phantom, fibonacci_directions, synthesize_hr


def noiseless(t_s: int) -> AcquisitionConfig:
    return AcquisitionConfig(thickness_factor=t_s, noise_sigma=0.0, noise_model="none")


def tiny_inr(hidden_width: int = 8, film_zero_init: bool = False, **overrides) -> InrConfig:
    fields = dict(
        spatial_features=4,
        spatial_sigma=2.0,
        angular_features=3,
        angular_sigma=1.0,
        hidden_layers=2,
        hidden_width=hidden_width,
        film_hidden=4,
        prior_channels=3,
        prior_blocks=1,
        prior_growth=2,
        prior_layers_per_block=2,
        film_zero_init=film_zero_init,
    )
    fields.update(overrides)
    return InrConfig(**fields)


def random_hr(dirs: DirectionSet, size: int = 16, seed: int = 0) -> HrSliceSet:
    """Unit-scale HR set for gradient checks, where phantom signal levels would swamp the differences."""
    rng = np.random.default_rng(seed)
    b0 = rng.uniform(0.5, 1.0, size=(size, size))
    dwis = rng.uniform(0.0, 1.0, size=(len(dirs), size, size))
    return HrSliceSet(b0=b0, dwis=dwis, direction_set=dirs, mask=np.ones((size, size), dtype=bool))


@pytest.fixture
def small_dirs() -> DirectionSet:
    return fibonacci_directions(8, seed=0, n_train=6)


@pytest.fixture
def small_phantom():
    return build_phantom(32, 32, layout_seed=0)


@pytest.fixture
def small_hr(small_phantom, small_dirs) -> HrSliceSet:
    return synthesize_hr(small_phantom, small_dirs)


@pytest.fixture
def small_acq(small_hr):
    return acquire(small_hr, noiseless(4))


@pytest.fixture
def tiny_config() -> InrConfig:
    return tiny_inr()


@pytest.fixture
def tiny_train_config(tiny_config) -> TrainConfig:
    return TrainConfig(iterations=3, directions_per_step=2, learning_rate=1e-3, log_every=1,
                       inr=tiny_config, seed=0)
