"""
SA-INR — Synthetic Phantom

Ground truth for the desk-scale protocol: quasi-uniform b-direction sets,
a per-pixel diffusion-tensor slice phantom, monoexponential DWI synthesis and
the N=1 rotating-view thick-slice acquisition.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from ..models import AcquisitionConfig, DirectionSet, ViewAngle
from .geometry import angle_from_direction, apply_noise, forward_model

logger = logging.getLogger(__name__)

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

# Background, fiber and through-plane eigenvalues (mm^2/s)
ISOTROPIC_D = 0.8e-3
CSF_D = 2.5e-3
FIBER_A = (1.7e-3, 0.3e-3, 0.3e-3)
FIBER_B = (1.5e-3, 0.35e-3, 0.35e-3)
THROUGH_PLANE = (1.6e-3, 0.3e-3, 0.3e-3)
PEAK_S0 = 1000.0

# Region labels
OUTSIDE, BACKGROUND, BAND_A, BAND_B, THROUGH, CSF = range(6)


class PhantomError(ValueError):
    """Invalid phantom or direction-set request."""
    pass


@dataclass(eq=False)
class PhantomSlice:
    """Per-pixel tensors (H, W, 3, 3), baseline signal S0, object mask and region labels."""
    width: int
    height: int
    tensors: np.ndarray
    s0: np.ndarray
    mask: np.ndarray
    labels: np.ndarray


@dataclass(eq=False)
class HrSliceSet:
    """High-resolution b=0 image and one DWI per direction (N, H, W)."""
    b0: np.ndarray
    dwis: np.ndarray
    direction_set: DirectionSet
    mask: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.b0.shape


@dataclass(eq=False)
class LrAcquisition:
    """One thick-slice view per direction: angles and LR images (N, H/t_s, W)."""
    views: list[ViewAngle]
    images: np.ndarray
    config: AcquisitionConfig
    direction_set: DirectionSet
    hr_shape: tuple[int, int]

    @property
    def thetas(self) -> list[float]:
        return [view.theta for view in self.views]


def fibonacci_directions(n: int, seed: int = 0, n_train: Optional[int] = None,
                         b_value: float = 1000.0) -> DirectionSet:
    """
    n points of the spherical Fibonacci lattice on the upper hemisphere.

    The lattice itself depends only on n; the seed only permutes which
    directions are tagged train and held_out.
    """
    if n < 1:
        raise PhantomError(f"need at least one direction, got {n}")
    n_train = n if n_train is None else n_train
    if not 0 <= n_train <= n:
        raise PhantomError(f"n_train={n_train} outside [0, {n}]")

    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (i + 0.5) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * GOLDEN_ANGLE
    vecs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)

    order = np.random.default_rng(seed).permutation(n)
    train = set(order[:n_train].tolist())
    split = ["train" if k in train else "held_out" for k in range(n)]
    return DirectionSet(directions=[tuple(v) for v in vecs.tolist()], b_value=b_value, split=split)


def dwi_signal(D: np.ndarray, g: Sequence[float], b: float, s0) -> np.ndarray:
    """S0 exp(-b g^T D g) for a tensor (3, 3) or a stack of tensors (..., 3, 3)."""
    if b < 0:
        raise PhantomError(f"b-value must be >= 0, got {b}")
    g = np.asarray(g, dtype=np.float64)
    if abs(np.linalg.norm(g) - 1.0) > 1e-9:
        raise PhantomError("direction is not unit norm")
    adc = np.einsum("i,...ij,j->...", g, np.asarray(D, dtype=np.float64), g)
    return np.asarray(s0, dtype=np.float64) * np.exp(-b * adc)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _band_weight(dist: np.ndarray, half_width: float, ramp: float) -> np.ndarray:
    """1 inside the band, 0 beyond half_width + ramp, C1-smooth in between."""
    return _smoothstep((half_width + ramp - dist) / ramp)


def _tensor(eigenvalues: Sequence[float], principal: Sequence[float]) -> np.ndarray:
    """Cylindrically symmetric tensor with the given principal axis."""
    e1 = np.asarray(principal, dtype=np.float64)
    e1 = e1 / np.linalg.norm(e1)
    l1, l2, _ = eigenvalues
    return l2 * np.eye(3) + (l1 - l2) * np.outer(e1, e1)


def build_phantom(width: int, height: int, layout_seed: int = 0) -> PhantomSlice:
    """
    Deterministic tensor phantom: isotropic background, two in-plane fiber
    bands, a through-plane fiber region, a CSF-like pool and a smooth S0 map.

    Regions are convex blends of PSD tensors, so every eigenvalue stays in
    [0.3e-3, 2.5e-3] mm^2/s.
    """
    if width < 32 or height < 32 or width % 8 or height % 8:
        raise PhantomError(f"phantom must be at least 32x32 and divisible by 8, got {width}x{height}")

    rng = np.random.default_rng(layout_seed)
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64),
                         indexing="ij")
    u = (xs - (width - 1) / 2.0) / (width / 2.0)
    v = (ys - (height - 1) / 2.0) / (height / 2.0)

    radius = np.sqrt((u / 0.9) ** 2 + (v / 0.8) ** 2)
    mask = radius < 1.0
    taper = np.where(mask, _smoothstep((1.0 - radius) / 0.1), 0.0)

    angle_a = math.radians(30.0 + rng.uniform(-10.0, 10.0))
    angle_b = math.radians(120.0 + rng.uniform(-10.0, 10.0))
    offset_a, offset_b = rng.uniform(-0.1, 0.1, size=2)
    through_center = np.array([-0.4, 0.35]) + rng.uniform(-0.05, 0.05, size=2)
    csf_center = np.array([0.4, -0.3]) + rng.uniform(-0.05, 0.05, size=2)

    def line_distance(angle: float, offset: float) -> np.ndarray:
        # distance to the line through the origin-offset point along `angle`
        return np.abs(-math.sin(angle) * u + math.cos(angle) * v - offset)

    def disc_distance(center: np.ndarray) -> np.ndarray:
        return np.hypot(u - center[0], v - center[1])

    regions = [
        (BAND_A, _band_weight(line_distance(angle_a, offset_a), 0.10, 0.08),
         _tensor(FIBER_A, (math.cos(angle_a), math.sin(angle_a), 0.0))),
        (BAND_B, _band_weight(line_distance(angle_b, offset_b), 0.08, 0.08),
         _tensor(FIBER_B, (math.cos(angle_b), math.sin(angle_b), 0.0))),
        (THROUGH, _band_weight(disc_distance(through_center), 0.14, 0.08),
         _tensor(THROUGH_PLANE, (0.0, 0.0, 1.0))),
        (CSF, _band_weight(disc_distance(csf_center), 0.10, 0.06), CSF_D * np.eye(3)),
    ]

    tensors = np.broadcast_to(ISOTROPIC_D * np.eye(3), (height, width, 3, 3)).copy()
    for _, weight, region_tensor in regions:
        w = weight[..., None, None]
        tensors = (1.0 - w) * tensors + w * region_tensor
    tensors[~mask] = 0.0

    weights = np.stack([w for _, w, _ in regions])
    labels = np.where(weights.max(axis=0) > 0.0,
                      np.array([label for label, _, _ in regions])[weights.argmax(axis=0)],
                      BACKGROUND)
    labels = np.where(mask, labels, OUTSIDE)

    tissue = 620.0 + 60.0 * np.cos(2.0 * u) * np.cos(1.5 * v)
    fiber = np.clip(regions[0][1] + regions[1][1], 0.0, 1.0)
    tissue = tissue - 90.0 * fiber
    csf_w = regions[3][1]
    s0 = taper * ((1.0 - csf_w) * tissue + csf_w * PEAK_S0)
    s0 = np.where(mask, s0, 0.0)

    logger.debug(f"built {width}x{height} phantom (seed={layout_seed}), {int(mask.sum())} pixels in mask")
    return PhantomSlice(width=width, height=height, tensors=tensors, s0=s0, mask=mask,
                        labels=labels.astype(np.int64))


def synthesize_hr(phantom: PhantomSlice, dirs: DirectionSet) -> HrSliceSet:
    """Noiseless HR DWIs S0 exp(-b g^T D g) for every direction; b0 is the S0 map."""
    dwis = np.stack([dwi_signal(phantom.tensors, g, dirs.b_value, phantom.s0) for g in dirs.vectors])
    return HrSliceSet(b0=phantom.s0.copy(), dwis=dwis, direction_set=dirs, mask=phantom.mask.copy())


def acquire(hr: HrSliceSet, cfg: AcquisitionConfig,
            thetas: Optional[Sequence[float]] = None) -> LrAcquisition:
    """
    One thick-slice view per direction at the angle of its x-y projection.

    Noise comes from a single generator seeded with cfg.rng_seed and consumed
    in direction order. `thetas` overrides the derived view angles.
    """
    height, width = hr.shape
    if height % cfg.thickness_factor:
        raise PhantomError(f"HR height {height} is not divisible by t_s={cfg.thickness_factor}")
    dirs = hr.direction_set
    if thetas is not None and len(thetas) != len(dirs):
        raise PhantomError(f"{len(thetas)} view angles for {len(dirs)} directions")

    rng = np.random.default_rng(cfg.rng_seed)
    views, images = [], []
    for i, g in enumerate(dirs.vectors):
        view = angle_from_direction(g)
        if thetas is not None:
            view = ViewAngle(theta=float(thetas[i]) % math.pi, source_direction=view.source_direction)
        with torch.no_grad():
            lr = forward_model(torch.from_numpy(hr.dwis[i]), view, cfg, rng=rng)
        views.append(view)
        images.append(lr.numpy())
    logger.info(
        f"acquired {len(views)} views (t_s={cfg.thickness_factor}, noise={cfg.noise_model}, "
        f"sigma={cfg.noise_sigma})"
    )
    return LrAcquisition(views=views, images=np.stack(images), config=cfg, direction_set=dirs,
                         hr_shape=(height, width))


def degrade_prior(b0: np.ndarray, cfg: AcquisitionConfig) -> np.ndarray:
    """
    Stress-test prior: the b=0 image acquired like a DWI at theta=0, replicated
    back to HR rows, with the acquisition noise applied.
    """
    t_s = cfg.thickness_factor
    height = b0.shape[0]
    lr = b0.reshape(height // t_s, t_s, -1).mean(axis=1)
    rng = np.random.default_rng(cfg.rng_seed + 1)
    return np.repeat(apply_noise(lr, cfg, rng), t_s, axis=0)
