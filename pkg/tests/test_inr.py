import numpy as np
import pytest
import torch
from torch.func import functional_call

from src.sainr.services.inr import (
    CoordGrid,
    FourierEmbedding,
    InrError,
    PriorEncoder,
    build_model,
    encode_prior,
    film_apply,
    fourier_embed,
    inr_forward,
    render_directions,
    render_slice,
    sample_features,
)
from src.sainr.services.numerics import ParamVector, finite_difference_check

from .conftest import tiny_inr


def _b0(size: int = 16, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.5, 1.0, size=(size, size))


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


# --- Coordinates ---

def test_grid_corners_and_spacing():
    grid = CoordGrid(height=8, width=16)
    coords = grid.coords
    assert coords.shape == (128, 2)
    assert coords[0].tolist() == pytest.approx([-1.0 + 1.0 / 16, -1.0 + 1.0 / 8])
    assert coords[-1].tolist() == pytest.approx([1.0 - 1.0 / 16, 1.0 - 1.0 / 8])
    steps = torch.diff(coords[:16, 0])
    assert torch.allclose(steps, torch.full_like(steps, 2.0 / 16))
    # row-major: x varies fastest
    assert coords[1, 1] == coords[0, 1]


# --- Fourier features ---

def test_fourier_embedding_at_zero():
    emb = FourierEmbedding(3, 5, sigma=2.0)
    out = fourier_embed([0.0, 0.0, 0.0], emb)
    assert out.shape == (10,)
    assert torch.equal(out[:5], torch.zeros(5, dtype=torch.float64))
    assert torch.equal(out[5:], torch.ones(5, dtype=torch.float64))


def test_fourier_embedding_single_frequency():
    emb = FourierEmbedding(2, 1, sigma=1.0)
    with torch.no_grad():
        emb.frequency_matrix.copy_(torch.tensor([[0.5, 0.0]], dtype=torch.float64))
    out = fourier_embed([1.0, 0.0], emb)
    assert out.tolist() == pytest.approx([0.0, -1.0], abs=1e-15)


def test_fourier_matrix_is_not_trained():
    emb = FourierEmbedding(2, 4, sigma=1.0)
    assert list(emb.parameters()) == []
    assert emb.out_features == 8


def test_fourier_embedding_rejects_wrong_dimension():
    with pytest.raises(InrError):
        fourier_embed([0.0, 0.0], FourierEmbedding(3, 2, sigma=1.0))


# --- Prior encoder ---

def test_disabled_encoder_returns_zeros():
    enc = PriorEncoder(tiny_inr(), enabled=False).double()
    fmap = encode_prior(_b0(), enc)
    assert fmap.shape == (3, 16, 16)
    assert torch.equal(fmap, torch.zeros_like(fmap))


def test_zero_input_gives_spatially_constant_features():
    torch.manual_seed(0)
    enc = PriorEncoder(tiny_inr(), enabled=True).double()
    fmap = encode_prior(np.zeros((12, 12)), enc)
    assert fmap.shape == (3, 12, 12)
    assert torch.allclose(fmap, fmap[:, :1, :1].expand_as(fmap), rtol=0, atol=1e-12)


def test_circular_padding_is_translation_equivariant():
    torch.manual_seed(0)
    enc = PriorEncoder(tiny_inr(prior_padding="circular"), enabled=True).double()
    b0 = _b0(12)
    shifted = encode_prior(np.roll(b0, 1, axis=1), enc)
    expected = torch.roll(encode_prior(b0, enc), 1, dims=2)
    assert torch.allclose(shifted, expected, rtol=0, atol=1e-10)


def test_encode_prior_rejects_nonfinite_input():
    b0 = _b0()
    b0[3, 3] = np.nan
    with pytest.raises(InrError):
        encode_prior(b0, PriorEncoder(tiny_inr()).double())


# --- Feature sampling ---

def _fmap() -> torch.Tensor:
    gen = torch.Generator().manual_seed(1)
    return torch.rand(2, 4, 5, generator=gen, dtype=torch.float64)


def test_sampling_at_pixel_center_returns_that_pixel():
    fmap = _fmap()
    grid = CoordGrid(4, 5)
    sampled = sample_features(fmap, grid.coords)
    assert torch.allclose(sampled, fmap.reshape(2, -1).T, rtol=0, atol=1e-12)


def test_sampling_midway_averages_neighbours():
    fmap = _fmap()
    x = (2.0 * 1 + 1) / 5 - 1 + 1.0 / 5  # halfway between columns 1 and 2
    y = (2.0 * 2 + 1) / 4 - 1            # center of row 2
    sampled = sample_features(fmap, torch.tensor([[x, y]], dtype=torch.float64))
    expected = 0.5 * (fmap[:, 2, 1] + fmap[:, 2, 2])
    assert torch.allclose(sampled[0], expected, rtol=0, atol=1e-12)


def test_sampling_beyond_corner_clamps():
    fmap = _fmap()
    sampled = sample_features(fmap, torch.tensor([[-1.0, -1.0], [1.0, 1.0]], dtype=torch.float64))
    assert torch.allclose(sampled[0], fmap[:, 0, 0], rtol=0, atol=1e-12)
    assert torch.allclose(sampled[1], fmap[:, -1, -1], rtol=0, atol=1e-12)


# --- FiLM ---

def test_film_apply_examples():
    a = torch.tensor([2.0, 3.0], dtype=torch.float64)
    assert film_apply(a, torch.ones(2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64)).tolist() == [2.0, 3.0]
    beta = torch.tensor([1.0, -1.0], dtype=torch.float64)
    assert film_apply(torch.zeros(2, dtype=torch.float64), torch.ones(2, dtype=torch.float64), beta).tolist() == [1.0, -1.0]
    alpha = torch.tensor([0.5, 2.0], dtype=torch.float64)
    assert film_apply(a, alpha, beta).tolist() == [2.0, 5.0]


def test_film_apply_length_mismatch():
    with pytest.raises(InrError):
        film_apply(torch.zeros(3), torch.ones(2), torch.zeros(2))


# --- Full model ---

def test_forward_is_deterministic():
    model = build_model(tiny_inr(), _b0(), seed=0)
    g = _unit([0.3, 0.4, 0.8])
    assert inr_forward(model, (0.1, -0.2), g) == inr_forward(model, (0.1, -0.2), g)


def test_same_seed_builds_identical_models():
    a = build_model(tiny_inr(), _b0(), seed=4)
    b = build_model(tiny_inr(), _b0(), seed=4)
    assert torch.equal(ParamVector.from_module(a).values, ParamVector.from_module(b).values)
    assert torch.equal(a.spatial_embed.frequency_matrix, b.spatial_embed.frequency_matrix)


def test_zero_trunk_gives_constant_output():
    model = build_model(tiny_inr(), _b0(), seed=0)
    with torch.no_grad():
        model.output.weight.zero_()
        model.output.bias.fill_(0.7)
    image = render_slice(model, CoordGrid(16, 16), _unit([1.0, 0.0, 1.0]))
    assert image.shape == (16, 16)
    assert (image == 0.7).all()


def test_film_identity_renders_direction_independent_images():
    model = build_model(tiny_inr(film_zero_init=True), _b0(), seed=0)
    grid = CoordGrid(16, 16)
    a = render_slice(model, grid, _unit([1.0, 0.0, 0.0]))
    b = render_slice(model, grid, _unit([0.2, 0.7, 0.5]))
    assert torch.equal(a, b)


def test_render_twice_is_bitwise_identical():
    model = build_model(tiny_inr(), _b0(), seed=1)
    grid = CoordGrid(16, 16)
    g = _unit([0.1, 0.2, 0.9])
    assert torch.equal(render_slice(model, grid, g), render_slice(model, grid, g))


def test_batched_render_matches_single_renders():
    model = build_model(tiny_inr(), _b0(), seed=1)
    grid = CoordGrid(16, 16)
    dirs = np.stack([_unit([1.0, 0.0, 0.2]), _unit([0.0, 1.0, 0.5])])
    batch = render_directions(model, grid, dirs)
    for k in range(2):
        assert torch.allclose(batch[k], render_slice(model, grid, dirs[k]), rtol=0, atol=1e-12)


def test_prior_ablation_keeps_parameter_layout():
    with_prior = build_model(tiny_inr(), _b0(), seed=0, use_prior=True)
    without = build_model(tiny_inr(), _b0(), seed=0, use_prior=False)
    assert ParamVector.from_module(with_prior).layout == ParamVector.from_module(without).layout
    assert torch.equal(without.features(), torch.zeros(3, 16, 16, dtype=torch.float64))


def test_render_is_smooth_in_direction():
    model = build_model(tiny_inr(), _b0(), seed=2)
    grid = CoordGrid(16, 16)
    g0 = _unit([0.3, -0.5, 0.8])
    e = _unit(np.cross(g0, [1.0, 0.0, 0.0]))
    def change(delta: float) -> float:
        # symmetric step, so the residual beyond the linear term is third order
        plus = render_slice(model, grid, _unit(g0 + delta * e))
        minus = render_slice(model, grid, _unit(g0 - delta * e))
        return float((plus - minus).abs().max()) / 2.0

    big, small = change(1e-3), change(5e-4)
    assert big > 0.0
    assert small <= 0.5 * big * (1.0 + 1e-3)


def test_nonfinite_activation_names_layer():
    model = build_model(tiny_inr(), _b0(), seed=0)
    with torch.no_grad():
        model.hidden[0].bias.fill_(float("inf"))
    with pytest.raises(InrError) as exc:
        render_slice(model, CoordGrid(16, 16), _unit([0.0, 0.0, 1.0]))
    assert exc.value.layer == 0


def test_unit_direction_required():
    model = build_model(tiny_inr(), _b0(), seed=0)
    with pytest.raises(InrError):
        inr_forward(model, (0.0, 0.0), (1.0, 1.0, 0.0))


def test_output_gradient_matches_finite_differences():
    model = build_model(tiny_inr(hidden_width=8), _b0(), seed=0)
    coords = CoordGrid(4, 4).coords
    dirs = torch.from_numpy(np.stack([_unit([0.2, 0.3, 0.9]), _unit([-0.6, 0.1, 0.4])]))
    params = ParamVector.from_module(model)

    def loss_fn(p: ParamVector) -> torch.Tensor:
        return functional_call(model, p.as_dict(), (coords, dirs)).sum()

    worst = finite_difference_check(loss_fn, params, per_segment=6)
    assert max(worst.values()) < 1e-4
