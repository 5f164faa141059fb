import math

import numpy as np
import pytest

from src.sainr.models import AcquisitionConfig
from src.sainr.services.geometry import apply_noise
from src.sainr.services.phantom import (
    BACKGROUND,
    BAND_A,
    BAND_B,
    CSF,
    THROUGH,
    HrSliceSet,
    PhantomError,
    PhantomSlice,
    acquire,
    build_phantom,
    degrade_prior,
    dwi_signal,
    fibonacci_directions,
    synthesize_hr,
)
from src.sainr.services.quant import maps_from_tensors

from .conftest import noiseless


# --- Directions ---

def test_single_direction():
    dirs = fibonacci_directions(1)
    assert len(dirs) == 1
    assert np.linalg.norm(dirs.vectors[0]) == pytest.approx(1.0, abs=1e-12)


def test_fifty_directions_are_unit_and_well_separated():
    dirs = fibonacci_directions(50, seed=0, n_train=40)
    vecs = dirs.vectors
    assert np.abs(np.linalg.norm(vecs, axis=1) - 1.0).max() < 1e-12
    assert (vecs[:, 2] >= 0.0).all()
    cosines = np.abs(vecs @ vecs.T)
    np.fill_diagonal(cosines, 0.0)
    min_angle = math.degrees(math.acos(min(1.0, cosines.max())))
    assert min_angle > 10.0
    assert len(dirs.train_indices) == 40
    assert len(dirs.held_out_indices) == 10


def test_seed_only_changes_the_split():
    a = fibonacci_directions(20, seed=0, n_train=15)
    b = fibonacci_directions(20, seed=0, n_train=15)
    c = fibonacci_directions(20, seed=1, n_train=15)
    assert a == b
    assert np.array_equal(a.vectors, c.vectors)
    assert a.split != c.split


def test_direction_count_must_be_positive():
    with pytest.raises(PhantomError):
        fibonacci_directions(0)
    with pytest.raises(PhantomError):
        fibonacci_directions(5, n_train=6)


# --- Signal model ---

def test_dwi_signal_examples():
    D = np.diag([1.7e-3, 0.2e-3, 0.2e-3])
    assert dwi_signal(D, (1.0, 0.0, 0.0), 1000.0, 1.0) == pytest.approx(0.18268, abs=1e-5)
    assert dwi_signal(D, (0.0, 1.0, 0.0), 0.0, 7.0) == 7.0
    g = np.array([1.0, 2.0, 2.0]) / 3.0
    assert dwi_signal(0.9e-3 * np.eye(3), g, 1000.0, 2.0) == pytest.approx(2.0 * math.exp(-0.9), rel=1e-12)


def test_dwi_signal_rejects_negative_b():
    with pytest.raises(PhantomError):
        dwi_signal(np.eye(3), (1.0, 0.0, 0.0), -1.0, 1.0)


# --- Phantom ---

def test_phantom_tensors_are_psd_within_range():
    phantom = build_phantom(64, 64, layout_seed=3)
    inside = phantom.tensors[phantom.mask]
    assert np.array_equal(inside, np.swapaxes(inside, -1, -2))
    eig = np.linalg.eigvalsh(inside)
    assert eig.min() >= 0.1e-3
    assert eig.max() <= 2.5e-3 + 1e-15
    assert (phantom.s0 >= 0.0).all()
    assert (phantom.s0[~phantom.mask] == 0.0).all()
    assert (phantom.tensors[~phantom.mask] == 0.0).all()


def test_phantom_has_every_region():
    phantom = build_phantom(64, 64, layout_seed=0)
    present = set(np.unique(phantom.labels[phantom.mask]).tolist())
    assert {BACKGROUND, BAND_A, BAND_B, THROUGH, CSF} <= present


def test_phantom_is_deterministic():
    a = build_phantom(32, 40, layout_seed=5)
    b = build_phantom(32, 40, layout_seed=5)
    for name in ("tensors", "s0", "mask", "labels"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.tensors.shape == (40, 32, 3, 3)


def test_phantom_layout_depends_on_seed():
    assert not np.array_equal(build_phantom(32, 32, 0).tensors, build_phantom(32, 32, 1).tensors)


@pytest.mark.parametrize("width, height", [(24, 32), (32, 36), (30, 32)])
def test_phantom_rejects_bad_dimensions(width, height):
    with pytest.raises(PhantomError):
        build_phantom(width, height)


def test_isotropic_region_has_zero_fa():
    phantom = build_phantom(64, 64, layout_seed=0)
    maps = maps_from_tensors(phantom.tensors, phantom.mask)
    background = phantom.mask & (phantom.labels == BACKGROUND)
    assert background.any()
    assert np.abs(maps.fa[background]).max() < 1e-12


# --- HR synthesis ---

def test_b0_is_the_s0_map(small_phantom, small_hr):
    assert np.array_equal(small_hr.b0, small_phantom.s0)


def test_diffusion_only_attenuates(small_hr):
    mask = small_hr.mask
    for dwi in small_hr.dwis:
        assert (dwi[mask] <= small_hr.b0[mask]).all()
        assert (dwi[mask] >= 0.0).all()


def test_isotropic_phantom_gives_direction_independent_dwis(small_dirs):
    size = 32
    mask = np.ones((size, size), dtype=bool)
    phantom = PhantomSlice(
        width=size, height=size,
        tensors=np.broadcast_to(0.8e-3 * np.eye(3), (size, size, 3, 3)).copy(),
        s0=np.full((size, size), 500.0), mask=mask, labels=np.zeros((size, size), dtype=np.int64),
    )
    hr = synthesize_hr(phantom, small_dirs)
    for dwi in hr.dwis[1:]:
        assert np.allclose(dwi, hr.dwis[0], rtol=1e-12, atol=0)


# --- Acquisition ---

def test_identity_acquisition_returns_hr(small_hr):
    lr = acquire(small_hr, noiseless(1), thetas=[0.0] * len(small_hr.direction_set))
    assert np.array_equal(lr.images, small_hr.dwis)


def test_one_view_per_direction(small_hr, small_acq):
    assert len(small_acq.views) == len(small_hr.direction_set)
    assert small_acq.images.shape == (len(small_hr.direction_set), 32 // 4, 32)
    assert small_acq.hr_shape == (32, 32)


def test_noiseless_acquisition_ignores_seed(small_hr):
    a = acquire(small_hr, AcquisitionConfig(thickness_factor=4, noise_sigma=0.0, rng_seed=1))
    b = acquire(small_hr, AcquisitionConfig(thickness_factor=4, noise_sigma=0.0, rng_seed=2))
    assert np.array_equal(a.images, b.images)


def test_noisy_acquisition_is_seeded(small_hr):
    cfg = AcquisitionConfig(thickness_factor=4, noise_sigma=10.0, noise_model="gaussian", rng_seed=3)
    a, b = acquire(small_hr, cfg), acquire(small_hr, cfg)
    assert np.array_equal(a.images, b.images)
    c = acquire(small_hr, cfg.model_copy(update={"rng_seed": 4}))
    assert not np.array_equal(a.images, c.images)


def test_acquire_requires_divisible_height(small_hr):
    with pytest.raises(PhantomError):
        acquire(small_hr, noiseless(3))


def test_rician_bias_matches_high_snr_expansion():
    s0, sigma = 100.0, 5.0
    cfg = AcquisitionConfig(thickness_factor=1, noise_sigma=sigma, noise_model="rician")
    samples = apply_noise(np.full(200_000, s0), cfg, np.random.default_rng(0))
    bias = samples.mean() - s0
    assert 0.0 < bias < 3.0 * sigma ** 2 / (2.0 * s0)


def test_degraded_prior_is_blocky_without_noise(small_hr):
    prior = degrade_prior(small_hr.b0, noiseless(4))
    assert prior.shape == small_hr.b0.shape
    blocks = prior.reshape(8, 4, 32)
    assert (blocks == blocks[:, :1, :]).all()
    assert np.allclose(blocks[:, 0, :], small_hr.b0.reshape(8, 4, 32).mean(axis=1))


def test_hr_set_shape_property(small_hr):
    assert isinstance(small_hr, HrSliceSet)
    assert small_hr.shape == (32, 32)
