"""
SA-INR — Spatial-Angular Implicit Neural Representation

f(c, F_w, g): Fourier-embedded pixel coordinates concatenated with features
sampled from a residual-dense encoding of the b=0 image, pushed through an
MLP trunk whose hidden activations are FiLM-modulated by an embedding of the
diffusion direction g.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..models import InrConfig

logger = logging.getLogger(__name__)


class InrError(ValueError):
    """Bad input to the network, or a non-finite activation at `layer`."""

    def __init__(self, message: str, layer: Optional[int] = None):
        super().__init__(message if layer is None else f"{message} (layer {layer})")
        self.layer = layer


# --- Coordinates ---

@dataclass(frozen=True)
class CoordGrid:
    """Pixel-center coordinates in [-1, 1]^2, row-major, (x, y) order."""
    height: int
    width: int

    @property
    def coords(self) -> torch.Tensor:
        xs = (2.0 * torch.arange(self.width, dtype=torch.float64) + 1.0) / self.width - 1.0
        ys = (2.0 * torch.arange(self.height, dtype=torch.float64) + 1.0) / self.height - 1.0
        yy, xx = torch.meshgrid(ys, xs, indexing="ij")
        return torch.stack([xx.reshape(-1), yy.reshape(-1)], dim=-1)

    def __len__(self) -> int:
        return self.height * self.width


# --- Building blocks ---

class FourierEmbedding(nn.Module):
    """gamma(v) = [sin(2 pi B v), cos(2 pi B v)] with B ~ N(0, sigma^2) fixed at init."""

    def __init__(self, in_features: int, features: int, sigma: float):
        super().__init__()
        self.in_features = in_features
        self.register_buffer(
            "frequency_matrix", torch.randn(features, in_features, dtype=torch.float64) * sigma
        )

    @property
    def out_features(self) -> int:
        return 2 * self.frequency_matrix.shape[0]

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        if v.shape[-1] != self.in_features:
            raise InrError(f"expected {self.in_features}-vectors, got trailing dimension {v.shape[-1]}")
        proj = 2.0 * math.pi * v @ self.frequency_matrix.T
        return torch.cat([torch.sin(proj), torch.cos(proj)], dim=-1)


def fourier_embed(v, emb: FourierEmbedding) -> torch.Tensor:
    return emb(torch.as_tensor(v, dtype=torch.float64))


class _DenseBlock(nn.Module):
    """Densely connected 3x3 convs, 1x1 local fusion and a local residual."""

    def __init__(self, channels: int, growth: int, layers: int, padding_mode: str):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(channels + i * growth, growth, 3, padding=1, padding_mode=padding_mode)
            for i in range(layers)
        )
        self.fuse = nn.Conv2d(channels + layers * growth, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = x
        for conv in self.convs:
            feats = torch.cat([feats, F.gelu(conv(feats))], dim=1)
        return x + self.fuse(feats)


class PriorEncoder(nn.Module):
    """
    Scaled-down residual dense network mapping the b=0 image (H, W) to a
    feature map (C, H, W).

    When disabled the encoder returns zeros of the same shape; its parameters
    stay in place so the parameter layout never depends on the variant.
    """

    def __init__(self, cfg: InrConfig, enabled: bool = True):
        super().__init__()
        self.enabled = enabled
        self.channels = cfg.prior_channels
        pad = cfg.prior_padding
        self.shallow = nn.Conv2d(1, cfg.prior_channels, 3, padding=1, padding_mode=pad)
        self.blocks = nn.ModuleList(
            _DenseBlock(cfg.prior_channels, cfg.prior_growth, cfg.prior_layers_per_block, pad)
            for _ in range(cfg.prior_blocks)
        )
        self.global_fuse = nn.Conv2d(cfg.prior_blocks * cfg.prior_channels, cfg.prior_channels, 1)
        self.global_conv = nn.Conv2d(cfg.prior_channels, cfg.prior_channels, 3, padding=1, padding_mode=pad)

    def forward(self, b0: torch.Tensor) -> torch.Tensor:
        height, width = b0.shape[-2:]
        if not self.enabled:
            return torch.zeros(self.channels, height, width, dtype=b0.dtype)
        shallow = self.shallow(b0.reshape(1, 1, height, width))
        h, outs = shallow, []
        for block in self.blocks:
            h = block(h)
            outs.append(h)
        fused = self.global_conv(self.global_fuse(torch.cat(outs, dim=1)))
        return (fused + shallow)[0]


def encode_prior(b0, enc: PriorEncoder) -> torch.Tensor:
    tensor = torch.as_tensor(b0, dtype=torch.float64)
    if not torch.isfinite(tensor).all():
        raise InrError("b=0 image contains non-finite values")
    return enc(tensor)


def sample_features(fmap: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Bilinear samples (P, C) of a (C, H, W) map; coordinates past the outer centers clamp to the border."""
    channels = fmap.shape[0]
    grid = coords.reshape(1, 1, -1, 2).to(fmap.dtype)
    sampled = F.grid_sample(fmap[None], grid, mode="bilinear", padding_mode="border", align_corners=False)
    return sampled.reshape(channels, -1).T


def film_apply(a: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    if a.shape[-1] != alpha.shape[-1] or a.shape[-1] != beta.shape[-1]:
        raise InrError(
            f"FiLM length mismatch: activation {a.shape[-1]}, alpha {alpha.shape[-1]}, beta {beta.shape[-1]}"
        )
    return alpha * a + beta


class FilmGenerator(nn.Module):
    """Two one-hidden-layer MLPs gamma(g) -> (alpha, beta), one pair per trunk layer."""

    def __init__(self, in_features: int, hidden: int, layers: int, width: int, zero_init: bool = True):
        super().__init__()
        self.layers = layers
        self.width = width
        self.alpha = nn.Sequential(nn.Linear(in_features, hidden), nn.GELU(), nn.Linear(hidden, layers * width))
        self.beta = nn.Sequential(nn.Linear(in_features, hidden), nn.GELU(), nn.Linear(hidden, layers * width))
        if zero_init:
            # alpha = 1, beta = 0 for every g at initialization
            for head in (self.alpha[-1], self.beta[-1]):
                nn.init.zeros_(head.weight)
                nn.init.zeros_(head.bias)

    def forward(self, gamma_g: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        k = gamma_g.shape[0]
        alpha = 1.0 + self.alpha(gamma_g).reshape(k, self.layers, self.width)
        beta = self.beta(gamma_g).reshape(k, self.layers, self.width)
        return alpha, beta


# --- Model ---

class InrModel(nn.Module):
    """
    The full network with its fixed b=0 image and signal scale as buffers.

    forward(coords (P, 2), directions (K, 3)) -> intensities (K, P)
    """

    def __init__(self, cfg: InrConfig, b0, use_prior: bool = True, signal_scale: float = 1.0):
        super().__init__()
        self.config = cfg
        self.spatial_embed = FourierEmbedding(2, cfg.spatial_features, cfg.spatial_sigma)
        self.angular_embed = FourierEmbedding(3, cfg.angular_features, cfg.angular_sigma)
        self.prior = PriorEncoder(cfg, enabled=use_prior)
        self.film = FilmGenerator(
            self.angular_embed.out_features, cfg.film_hidden, cfg.hidden_layers, cfg.hidden_width,
            zero_init=cfg.film_zero_init,
        )
        in_features = self.spatial_embed.out_features + cfg.prior_channels
        self.hidden = nn.ModuleList(
            nn.Linear(in_features if i == 0 else cfg.hidden_width, cfg.hidden_width)
            for i in range(cfg.hidden_layers)
        )
        self.output = nn.Linear(cfg.hidden_width, 1)
        self.register_buffer("b0", torch.as_tensor(np.asarray(b0), dtype=torch.float64).clone())
        self.register_buffer("signal_scale", torch.tensor(float(signal_scale), dtype=torch.float64))
        self.double()

    @property
    def use_prior(self) -> bool:
        return self.prior.enabled

    def features(self) -> torch.Tensor:
        return self.prior(self.b0 / self.signal_scale)

    def forward(self, coords: torch.Tensor, directions: torch.Tensor) -> torch.Tensor:
        if coords.dim() != 2 or coords.shape[-1] != 2:
            raise InrError(f"coordinates must be (P, 2), got {tuple(coords.shape)}")
        if directions.dim() != 2 or directions.shape[-1] != 3:
            raise InrError(f"directions must be (K, 3), got {tuple(directions.shape)}")

        feats = sample_features(self.features(), coords)
        h = torch.cat([self.spatial_embed(coords), feats], dim=-1)
        alpha, beta = self.film(self.angular_embed(directions))

        for i, layer in enumerate(self.hidden):
            # (P, W) on the first layer, then (K, P, W) once FiLM introduces g
            h = film_apply(F.gelu(layer(h)), alpha[:, i, None, :], beta[:, i, None, :])
            if not torch.isfinite(h).all():
                raise InrError("non-finite activation", layer=i)
        out = self.output(h).squeeze(-1) * self.signal_scale
        if not torch.isfinite(out).all():
            raise InrError("non-finite output", layer=len(self.hidden))
        return out


def build_model(cfg: InrConfig, b0, seed: int, use_prior: bool = True,
                signal_scale: float = 1.0) -> InrModel:
    """Construct an InrModel with every random draw taken from `seed`."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = InrModel(cfg, b0, use_prior=use_prior, signal_scale=signal_scale)
    logger.debug(
        f"built INR (seed={seed}, prior={'on' if use_prior else 'off'}, "
        f"{sum(p.numel() for p in model.parameters())} parameters)"
    )
    return model


def _unit_directions(g) -> torch.Tensor:
    dirs = torch.as_tensor(np.asarray(g, dtype=np.float64)).reshape(-1, 3)
    norms = torch.linalg.vector_norm(dirs, dim=-1)
    if (torch.abs(norms - 1.0) > 1e-9).any():
        raise InrError("direction is not unit norm")
    return dirs


def inr_forward(model: InrModel, c, g) -> float:
    coords = torch.as_tensor(np.asarray(c, dtype=np.float64)).reshape(1, 2)
    return float(model(coords, _unit_directions(g))[0, 0])


def render_directions(model: InrModel, grid: CoordGrid, directions) -> torch.Tensor:
    """Full-grid renders for K directions: (K, H, W)."""
    dirs = _unit_directions(directions)
    return model(grid.coords, dirs).reshape(-1, grid.height, grid.width)


def render_slice(model: InrModel, grid: CoordGrid, g) -> torch.Tensor:
    return render_directions(model, grid, g)[0]
