"""
SA-INR — Image Quality Metrics

PSNR, SSIM and NMSE over masked pixels, the evaluation mask, and per-split
reports with Mean(Std) aggregates.
"""
import logging
from typing import Mapping, Optional

import numpy as np
from scipy import ndimage

from ..models import DirectionMetrics, MetricReport
from .phantom import HrSliceSet

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius int(3.5 * 1.5 + 0.5) = 5, an 11x11 window
SSIM_RADIUS = 5
RATIO_S0_FRACTION = 0.01
MASK_EROSION = 2


class MetricError(ValueError):
    """Invalid metric input."""
    pass


def _pair(est, ref) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise MetricError(f"shape mismatch {est.shape} vs {ref.shape}")
    return est, ref


def _mask_for(shape: tuple[int, ...], mask) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise MetricError(f"mask shape {mask.shape} does not match image shape {shape}")
    if not mask.any():
        raise MetricError("mask selects no pixels")
    return mask


def psnr(est, ref, data_range: float, mask=None) -> float:
    est, ref = _pair(est, ref)
    if not data_range > 0:
        raise MetricError(f"data_range must be positive, got {data_range}")
    mask = _mask_for(ref.shape, mask)
    mse = float(((est[mask] - ref[mask]) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return float(10.0 * np.log10(data_range ** 2 / mse))


def ssim(est, ref, data_range: float, mask=None) -> float:
    """Mean local SSIM, Gaussian window sigma 1.5, over windows lying inside the mask."""
    est, ref = _pair(est, ref)
    if est.ndim != 2 or min(est.shape) < 2 * SSIM_RADIUS + 1:
        raise MetricError(f"SSIM needs a 2D image of at least 11x11, got {est.shape}")
    if not data_range > 0:
        raise MetricError(f"data_range must be positive, got {data_range}")

    def blur(x):
        return ndimage.gaussian_filter(x, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE)

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_x, mu_y = blur(est), blur(ref)
    var_x = blur(est * est) - mu_x * mu_x
    var_y = blur(ref * ref) - mu_y * mu_y
    cov = blur(est * ref) - mu_x * mu_y
    local = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2))

    inside = np.zeros(est.shape, dtype=bool)
    inside[SSIM_RADIUS:-SSIM_RADIUS, SSIM_RADIUS:-SSIM_RADIUS] = True
    if mask is not None:
        eroded = ndimage.binary_erosion(_mask_for(est.shape, mask), iterations=SSIM_RADIUS)
        inside &= eroded
        if not inside.any():
            raise MetricError("mask is too small for an 11x11 SSIM window")
    return float(local[inside].mean())


def nmse(est, ref, mask=None) -> float:
    est, ref = _pair(est, ref)
    mask = _mask_for(ref.shape, mask)
    energy = float((ref[mask] ** 2).sum())
    if energy == 0.0:
        raise MetricError("reference has zero energy within the mask")
    return float(((est[mask] - ref[mask]) ** 2).sum()) / energy


def evaluation_mask(object_mask: np.ndarray) -> np.ndarray:
    """Object mask eroded by 2 px, intersected with the circle inscribed in the image."""
    object_mask = np.asarray(object_mask, dtype=bool)
    height, width = object_mask.shape
    ys, xs = np.mgrid[0:height, 0:width]
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    circle = (xs - cx) ** 2 + (ys - cy) ** 2 <= (min(height, width) - 1) ** 2 / 4.0
    return ndimage.binary_erosion(object_mask, iterations=MASK_EROSION) & circle


def direction_metrics(index: int, est: np.ndarray, gt: np.ndarray, s0: np.ndarray,
                      mask: np.ndarray) -> DirectionMetrics:
    """
    Image metrics of one reconstructed direction against its ground truth.

    Args:
        index: Direction index recorded in the row
        est: Reconstructed DWI (H, W)
        gt: Ground-truth DWI (H, W); its range inside the mask is the PSNR/SSIM data range
        s0: b=0 image used for the DWI/S0 ratio
        mask: Evaluation mask

    Returns:
        DirectionMetrics with PSNR, SSIM, NMSE and NMSE of DWI/S0 over
        pixels where S0 is at least 1% of its maximum
    """
    gt_in = gt[mask]
    data_range = float(gt_in.max() - gt_in.min())
    ratio_mask = mask & (s0 >= RATIO_S0_FRACTION * float(s0.max()))
    safe_s0 = np.where(ratio_mask, s0, 1.0)
    return DirectionMetrics(
        index=index,
        psnr=psnr(est, gt, data_range, mask),
        ssim=ssim(est, gt, data_range, mask),
        nmse=nmse(est, gt, mask),
        nmse_ratio=nmse(est / safe_s0, gt / safe_s0, ratio_mask),
    )


def evaluate_split(srs: Mapping[int, np.ndarray], gts: HrSliceSet, split: str,
                   method: str = "SR", mask: Optional[np.ndarray] = None) -> MetricReport:
    """
    Metrics of `srs` (direction index -> HR image) against the ground truth
    for every direction of the split, trained or unseen.
    """
    if split == "trained":
        expected = gts.direction_set.train_indices
    elif split == "unseen":
        expected = gts.direction_set.held_out_indices
    else:
        raise MetricError(f"unknown split '{split}'")
    missing = [i for i in expected if i not in srs]
    if missing:
        raise MetricError(f"{method}: no reconstruction for {split} directions {missing}")

    mask = evaluation_mask(gts.mask) if mask is None else np.asarray(mask, dtype=bool)
    rows = [
        direction_metrics(i, np.asarray(srs[i], dtype=np.float64), gts.dwis[i], gts.b0, mask)
        for i in expected
    ]
    report = MetricReport.from_directions(split, method, rows)
    logger.info(
        f"{method} {split}: PSNR {report.aggregates['psnr'].mean:.2f} "
        f"SSIM {report.aggregates['ssim'].mean:.4f} NMSE {report.aggregates['nmse'].mean:.4g}"
    )
    return report


def merge_reports(reports: list[MetricReport]) -> MetricReport:
    """Pool the per-direction rows of several slices into one report."""
    if not reports:
        raise MetricError("nothing to merge")
    split, method = reports[0].split, reports[0].method
    if any(r.split != split or r.method != method for r in reports):
        raise MetricError("reports differ in split or method")
    rows = [row for r in reports for row in r.directions]
    return MetricReport.from_directions(split, method, rows)


def error_map(est, ref) -> np.ndarray:
    est, ref = _pair(est, ref)
    return np.abs(est - ref)


def line_profile(images: Mapping[str, np.ndarray], row: int) -> list[dict]:
    """Intensities along one image row, one record per column with a value per image."""
    arrays = {label: np.asarray(img, dtype=np.float64) for label, img in images.items()}
    shapes = {a.shape for a in arrays.values()}
    if len(shapes) != 1:
        raise MetricError(f"line profile images differ in shape: {sorted(shapes)}")
    (shape,) = shapes
    if not 0 <= row < shape[0]:
        raise MetricError(f"row {row} outside [0, {shape[0]})")
    return [
        {"column": x, **{label: float(a[row, x]) for label, a in arrays.items()}}
        for x in range(shape[1])
    ]
