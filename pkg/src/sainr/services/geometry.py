"""
SA-INR — Acquisition Geometry

The forward model M = D(t_s) ∘ R(theta) of a rotating-view thick-slice
acquisition, realized per 2D slice:

- R rotates in-plane about the image center with bilinear interpolation and
  zero fill outside the support.
- D averages t_s consecutive rows (the slice axis is vertical in the rotated
  frame); its backward pass is the exact adjoint `upsample_adjoint`.

Images are float64 torch tensors shaped (..., H, W), row-major, x to the right
and y down.
"""
import logging
import math
from functools import lru_cache
from typing import Literal, Optional, Sequence

import numpy as np
import torch

from ..models import AcquisitionConfig, ViewAngle

logger = logging.getLogger(__name__)

Direction = Literal["forward", "inverse"]


class GeometryError(ValueError):
    """Invalid input to a geometry operator."""
    pass


def _as_image(img) -> torch.Tensor:
    tensor = torch.as_tensor(img, dtype=torch.float64)
    if tensor.dim() < 2:
        raise GeometryError(f"image must have at least 2 dimensions, got shape {tuple(tensor.shape)}")
    return tensor


def angle_from_direction(g: Sequence[float]) -> ViewAngle:
    """Project a unit b-vector onto the x-y plane and fold its angle into [0, pi)."""
    gx, gy, gz = (float(v) for v in g)
    norm = math.sqrt(gx * gx + gy * gy + gz * gz)
    if abs(norm - 1.0) > 1e-9:
        raise GeometryError(f"direction is not unit norm (|g|={norm:.12f})")
    if math.hypot(gx, gy) < 1e-6:
        logger.warning(f"direction {(gx, gy, gz)} is perpendicular to the slice plane, using theta=0")
        theta = 0.0
    else:
        theta = math.atan2(gy, gx) % math.pi
        if theta >= math.pi:
            theta = 0.0
    return ViewAngle(theta=theta, source_direction=(gx, gy, gz))


@lru_cache(maxsize=512)
def _rotation_taps(height: int, width: int, theta: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Flat source indices (P, 4) and bilinear weights (P, 4) for output pixels."""
    ys, xs = torch.meshgrid(
        torch.arange(height, dtype=torch.float64),
        torch.arange(width, dtype=torch.float64),
        indexing="ij",
    )
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    dx, dy = xs - cx, ys - cy
    # output p samples the input at c + R(-theta)(p - c)
    sx = (cx + cos_t * dx + sin_t * dy).reshape(-1)
    sy = (cy - sin_t * dx + cos_t * dy).reshape(-1)

    x0, y0 = torch.floor(sx), torch.floor(sy)
    fx, fy = sx - x0, sy - y0
    x0, y0 = x0.long(), y0.long()

    idx, weights = [], []
    for ox, oy, w in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi, yi = x0 + ox, y0 + oy
        inside = (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height)
        idx.append(torch.where(inside, yi * width + xi, torch.zeros_like(xi)))
        weights.append(torch.where(inside, w, torch.zeros_like(w)))
    return torch.stack(idx, dim=-1), torch.stack(weights, dim=-1)


def rotate(img, theta: float, direction: Direction = "forward") -> torch.Tensor:
    """Rotate (..., H, W) images by theta about the center; `inverse` applies -theta."""
    if direction not in ("forward", "inverse"):
        raise GeometryError(f"unknown rotation direction '{direction}'")
    tensor = _as_image(img)
    angle = float(theta) if direction == "forward" else -float(theta)
    height, width = tensor.shape[-2:]
    idx, weights = _rotation_taps(height, width, angle)
    flat = tensor.reshape(*tensor.shape[:-2], height * width)
    out = (flat[..., idx] * weights).sum(dim=-1)
    return out.reshape(tensor.shape)


def rotate_batch(images: torch.Tensor, thetas: Sequence[float]) -> torch.Tensor:
    """Rotate each of K images (K, H, W) by its own angle."""
    k, height, width = images.shape
    if len(thetas) != k:
        raise GeometryError(f"{len(thetas)} angles for {k} images")
    taps = [_rotation_taps(height, width, float(t)) for t in thetas]
    idx = torch.stack([t[0] for t in taps])
    weights = torch.stack([t[1] for t in taps])
    flat = images.reshape(k, height * width)
    gathered = torch.gather(flat, 1, idx.reshape(k, -1)).reshape(idx.shape)
    return (gathered * weights).sum(dim=-1).reshape(k, height, width)


def _check_factor(t_s: int) -> int:
    if int(t_s) != t_s or t_s < 1:
        raise GeometryError(f"thickness factor must be an integer >= 1, got {t_s}")
    return int(t_s)


def _block_mean(tensor: torch.Tensor, t_s: int) -> torch.Tensor:
    height, width = tensor.shape[-2:]
    return tensor.reshape(*tensor.shape[:-2], height // t_s, t_s, width).mean(dim=-2)


def upsample_adjoint(img, t_s: int) -> torch.Tensor:
    """Exact adjoint of `downsample_thick`: each row divided by t_s and repeated t_s times."""
    t_s = _check_factor(t_s)
    tensor = _as_image(img)
    return torch.repeat_interleave(tensor, t_s, dim=-2) / t_s


class ThickSliceAverage(torch.autograd.Function):
    """D(t_s) with its adjoint as the backward pass."""

    @staticmethod
    def forward(ctx, x: torch.Tensor, t_s: int) -> torch.Tensor:
        ctx.t_s = t_s
        return _block_mean(x, t_s)

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor):
        return upsample_adjoint(grad_output, ctx.t_s), None


def downsample_thick(img, t_s: int) -> torch.Tensor:
    """Average t_s vertically consecutive pixels; height must be divisible by t_s."""
    t_s = _check_factor(t_s)
    tensor = _as_image(img)
    if tensor.shape[-2] % t_s:
        raise GeometryError(f"image height {tensor.shape[-2]} is not divisible by t_s={t_s}")
    return ThickSliceAverage.apply(tensor, t_s)


def project(images: torch.Tensor, thetas: Sequence[float], t_s: int) -> torch.Tensor:
    """Noiseless M applied to K images with one view angle each: (K, H, W) -> (K, H/t_s, W)."""
    return downsample_thick(rotate_batch(images, thetas), t_s)


def apply_noise(image: np.ndarray, cfg: AcquisitionConfig, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian noise, or the magnitude of complex Gaussian noise (Rician)."""
    if not cfg.has_noise:
        return image.copy()
    sigma = cfg.noise_sigma
    if cfg.noise_model == "gaussian":
        return image + rng.normal(0.0, sigma, size=image.shape)
    real = image + rng.normal(0.0, sigma, size=image.shape)
    imag = rng.normal(0.0, sigma, size=image.shape)
    return np.hypot(real, imag)


def forward_model(img_hr, view: ViewAngle, cfg: AcquisitionConfig,
                  rng: Optional[np.random.Generator] = None) -> torch.Tensor:
    """
    Simulate one thick-slice view: downsample_thick(rotate(img, theta), t_s) + n.

    Noise is drawn from `rng`, or from a generator seeded with cfg.rng_seed
    when none is given. Pass `cfg.noiseless()` for the pure linear operator.

    Args:
        img_hr: HR image (..., H, W), H divisible by the thickness factor
        view: In-plane rotation of this view
        cfg: Thickness factor and noise model
        rng: Generator to draw noise from

    Returns:
        LR view of shape (..., H / t_s, W). Differentiable when noiseless.
    """
    tensor = _as_image(img_hr)
    if tensor.shape[-2] % cfg.thickness_factor:
        raise GeometryError(
            f"image height {tensor.shape[-2]} is not divisible by t_s={cfg.thickness_factor}"
        )
    lr = downsample_thick(rotate(tensor, view.theta, "forward"), cfg.thickness_factor)
    if not cfg.has_noise:
        return lr
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    noisy = apply_noise(lr.detach().numpy(), cfg, rng)
    return torch.from_numpy(noisy)


def nyquist_views(t_s: int) -> int:
    """Minimum rotating-view count N >= (pi/2) t_s for classical inversion."""
    if t_s < 1:
        raise GeometryError(f"thickness factor must be >= 1, got {t_s}")
    return math.ceil(math.pi / 2.0 * t_s)


def forward_matrix(height: int, width: int, thetas: Sequence[float], t_s: int) -> np.ndarray:
    """Dense matrix of the stacked noiseless views, rows = LR pixels of every view."""
    n = height * width
    basis = torch.eye(n, dtype=torch.float64).reshape(n, height, width)
    blocks = []
    with torch.no_grad():
        for theta in thetas:
            lr = downsample_thick(rotate(basis, theta), t_s)
            blocks.append(lr.reshape(n, -1).T.numpy())
    return np.concatenate(blocks, axis=0)
