import numpy as np
import pytest

from src.sainr.models import DirectionMetrics, MetricReport
from src.sainr.services.metrics import (
    PSNR_CAP,
    MetricError,
    direction_metrics,
    error_map,
    evaluate_split,
    evaluation_mask,
    line_profile,
    merge_reports,
    nmse,
    psnr,
    ssim,
)


def _image(size: int = 32, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(size=(size, size))


# --- Pixel metrics ---

def test_identical_images_hit_psnr_cap():
    img = _image()
    assert psnr(img, img, 1.0) == PSNR_CAP


def test_constant_offset_psnr():
    img = _image()
    assert psnr(img + 0.1, img, 1.0) == pytest.approx(20.0, abs=1e-9)


def test_psnr_only_counts_masked_pixels():
    img = _image()
    est = img.copy()
    mask = np.zeros(img.shape, dtype=bool)
    mask[:16] = True
    est[~mask] += 5.0
    assert psnr(est, img, 1.0, mask) == PSNR_CAP


def test_ssim_of_identical_images_is_one():
    img = _image()
    assert ssim(img, img, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_noise_lowers_ssim():
    img = _image()
    noisy = img + np.random.default_rng(1).normal(scale=0.3, size=img.shape)
    assert ssim(noisy, img, 1.0) < 0.9


def test_ssim_of_constant_offset_is_luminance_term():
    v, c = 0.4, 0.1
    c1 = (0.01 * 1.0) ** 2
    ref = np.full((24, 24), v)
    expected = (2 * v * (v + c) + c1) / (v ** 2 + (v + c) ** 2 + c1)
    assert ssim(ref + c, ref, 1.0) == pytest.approx(expected, abs=1e-10)
    assert expected < 1.0


def test_negated_zero_mean_image_has_negative_ssim():
    ys, xs = np.mgrid[0:32, 0:32]
    ref = np.where((xs + ys) % 2 == 0, 0.5, -0.5)
    assert ssim(-ref, ref, 1.0) < -0.9


def test_ssim_needs_a_full_window():
    with pytest.raises(MetricError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)), 1.0)


def test_nmse_is_scale_covariant_and_bounded_by_zero_estimate():
    ref, est = _image(seed=2), _image(seed=3)
    assert nmse(3.0 * est, 3.0 * ref) == pytest.approx(nmse(est, ref), rel=1e-12)
    assert nmse(np.zeros_like(ref), ref) == pytest.approx(1.0)


def test_nmse_rejects_zero_reference():
    with pytest.raises(MetricError):
        nmse(np.ones((4, 4)), np.zeros((4, 4)))


@pytest.mark.parametrize("metric", [
    lambda a, b: psnr(a, b, 1.0),
    lambda a, b: ssim(a, b, 1.0),
    nmse,
    error_map,
])
def test_shape_mismatch_is_rejected(metric):
    with pytest.raises(MetricError):
        metric(np.ones((16, 16)), np.ones((16, 12)))


def test_empty_mask_is_rejected():
    img = _image()
    with pytest.raises(MetricError):
        psnr(img, img, 1.0, np.zeros(img.shape, dtype=bool))


# --- Evaluation mask ---

def test_evaluation_mask_is_inside_object_and_circle():
    full = np.ones((32, 32), dtype=bool)
    mask = evaluation_mask(full)
    assert mask[16, 16]
    assert not mask[:2].any() and not mask[:, -2:].any()
    # corners fall outside the inscribed circle
    assert not mask[3, 3]


def test_evaluation_mask_is_subset_of_phantom(small_hr):
    mask = evaluation_mask(small_hr.mask)
    assert mask.any()
    assert not (mask & ~small_hr.mask).any()


# --- Reports ---

def test_perfect_reconstruction_report(small_hr):
    srs = {i: small_hr.dwis[i] for i in range(len(small_hr.direction_set))}
    report = evaluate_split(srs, small_hr, "trained")
    assert report.split == "trained" and report.method == "SR"
    assert [row.index for row in report.directions] == small_hr.direction_set.train_indices
    assert report.aggregates["psnr"].mean == PSNR_CAP
    assert report.aggregates["ssim"].mean == pytest.approx(1.0, abs=1e-12)
    assert report.aggregates["nmse"].mean == 0.0
    assert report.aggregates["nmse_ratio"].mean == 0.0
    assert report.aggregates["psnr"].std == 0.0


def test_unseen_split_uses_held_out_directions(small_hr):
    held_out = small_hr.direction_set.held_out_indices
    report = evaluate_split({i: small_hr.dwis[i] for i in held_out}, small_hr, "unseen", method="Baseline")
    assert [row.index for row in report.directions] == held_out


def test_missing_direction_is_reported(small_hr):
    with pytest.raises(MetricError, match="no reconstruction"):
        evaluate_split({}, small_hr, "trained")


def test_unknown_split(small_hr):
    with pytest.raises(MetricError):
        evaluate_split({}, small_hr, "validation")


def test_ratio_nmse_divides_by_s0(small_hr):
    mask = evaluation_mask(small_hr.mask)
    gt = small_hr.dwis[0]
    row = direction_metrics(0, 1.1 * gt, gt, small_hr.b0, mask)
    assert row.nmse == pytest.approx(0.01, rel=1e-9)
    assert row.nmse_ratio == pytest.approx(0.01, rel=1e-9)


def _row(index: int, value: float) -> DirectionMetrics:
    return DirectionMetrics(index=index, psnr=value, ssim=value, nmse=value, nmse_ratio=value)


def test_aggregates_use_population_std():
    report = MetricReport.from_directions("trained", "SR", [_row(0, 1.0), _row(1, 3.0)])
    assert report.aggregates["psnr"].mean == 2.0
    assert report.aggregates["psnr"].std == 1.0


def test_merge_pools_rows():
    a = MetricReport.from_directions("unseen", "SR", [_row(0, 1.0)])
    b = MetricReport.from_directions("unseen", "SR", [_row(0, 3.0)])
    merged = merge_reports([a, b])
    assert len(merged.directions) == 2
    assert merged.aggregates["nmse"].mean == 2.0


def test_merge_rejects_mixed_reports():
    a = MetricReport.from_directions("unseen", "SR", [_row(0, 1.0)])
    b = MetricReport.from_directions("trained", "SR", [_row(0, 1.0)])
    with pytest.raises(MetricError):
        merge_reports([a, b])
    with pytest.raises(MetricError):
        merge_reports([])


# --- Figures data ---

def test_line_profile_records():
    a = np.arange(12.0).reshape(3, 4)
    rows = line_profile({"GT": a, "SR": a + 1.0}, row=1)
    assert len(rows) == 4
    assert rows[2] == {"column": 2, "GT": 6.0, "SR": 7.0}


def test_line_profile_validates_row_and_shapes():
    with pytest.raises(MetricError):
        line_profile({"GT": np.zeros((3, 4))}, row=3)
    with pytest.raises(MetricError):
        line_profile({"GT": np.zeros((3, 4)), "SR": np.zeros((4, 4))}, row=0)


def test_error_map_is_absolute_difference():
    assert error_map([1.0, -2.0], [0.5, 1.0]).tolist() == [0.5, 3.0]
