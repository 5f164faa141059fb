"""
SA-INR — DTI and Evaluation Stages

`dti` fits tensors to the ground truth and to the SR reconstructions (trained
directions only, and trained plus zero-shot); `evaluate` scores every method
on both splits, compares the DTI maps and writes figures, tables and the
summary.
"""
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from ..models import MapComparison, MetricReport
from ..services.metrics import evaluate_split, evaluation_mask
from ..services.quant import QuantError, compare_maps, fit_images, maps_from_tensors
from ..services.trainer import baseline_reconstruct
from ..storage import manifest_hash
from ..workspace import ABLATION_VARIANT, PRIOR_VARIANT, Workspace
from .common import stage
from .reporting import (
    METHOD_LABELS,
    method_slug,
    write_dti_figures,
    write_dti_table,
    write_dwi_figures,
    write_image_table,
    write_line_profile,
    write_summary,
)

logger = logging.getLogger(__name__)

ANALYTIC_MAPS = "phantom"
GT_MAPS = "gt"
RES_TRAINED = "res_trained"
RES_ALL = "res_all"
CUSTOM_MAPS = "custom"

# fit label -> reference label
DTI_REFERENCES = {
    GT_MAPS: ANALYTIC_MAPS,
    RES_TRAINED: GT_MAPS,
    RES_ALL: GT_MAPS,
    CUSTOM_MAPS: GT_MAPS,
}


def _fit_and_save(ws: Workspace, k: int, label: str, images: np.ndarray, b0: np.ndarray,
                  indices: list[int], hr_dirs) -> None:
    n = len(hr_dirs)
    bad = [i for i in indices if not 0 <= i < n]
    if bad:
        raise QuantError(f"direction indices {bad} outside [0, {n})")
    if len(set(indices)) != len(indices):
        raise QuantError(f"duplicate direction indices in {indices}")
    fit, maps = fit_images(images[indices], b0, hr_dirs.subset(indices))
    ws.save_maps(k, label, maps, fit.tensor, indices)
    logger.info(f"slice {k}: {label} fit on {len(indices)} directions, {int(maps.mask.sum())} valid pixels")


def cmd_dti(out: Path, directions: Optional[list[int]] = None) -> Workspace:
    """
    Without `directions`: analytic, ground-truth (all HR DWIs), SR on the
    trained directions and SR on all directions. With `directions`: one extra
    fit of the SR images at exactly those indices.
    """
    ws = Workspace(out)
    with stage("dti"):
        manifest = ws.read_manifest()
        for k in range(manifest.slices):
            hr = ws.load_hr(k)
            dirs = hr.direction_set
            sr = ws.load_renders(k, PRIOR_VARIANT, "sr")
            prior = ws.load_prior(k)
            if directions is not None:
                _fit_and_save(ws, k, CUSTOM_MAPS, sr, prior, list(directions), dirs)
                continue
            phantom = ws.load_phantom(k)
            ws.save_maps(k, ANALYTIC_MAPS, maps_from_tensors(phantom.tensors, phantom.mask),
                         phantom.tensors, [])
            _fit_and_save(ws, k, GT_MAPS, hr.dwis, hr.b0, list(range(len(dirs))), dirs)
            _fit_and_save(ws, k, RES_TRAINED, sr, prior, dirs.train_indices, dirs)
            _fit_and_save(ws, k, RES_ALL, sr, prior, list(range(len(dirs))), dirs)
    return ws


def _map_display_name(label: str, count: int) -> str:
    if label == ANALYTIC_MAPS:
        return "analytic"
    if label == GT_MAPS:
        return f"GT-{count}"
    if label == CUSTOM_MAPS:
        return f"custom-{count}"
    return f"RES-{count}"


def compare_dti(ws: Workspace, k: int, mask: np.ndarray) -> list[MapComparison]:
    rows = []
    for label, reference in DTI_REFERENCES.items():
        if not (ws.has_maps(k, label) and ws.has_maps(k, reference)):
            continue
        est, ref = ws.load_maps(k, label), ws.load_maps(k, reference)
        count = len(ws.fit_directions(k, label))
        ref_count = len(ws.fit_directions(k, reference))
        region = mask & est.mask & ref.mask
        rows.append(MapComparison(
            slice_index=k,
            label=_map_display_name(label, count),
            reference=_map_display_name(reference, ref_count),
            direction_count=count,
            nmse=compare_maps(est, ref, region),
        ))
    return rows


def cmd_evaluate(out: Path) -> Workspace:
    """Score LR baseline and SR variants on both splits and write all reports."""
    ws = Workspace(out)
    with stage("evaluate"):
        manifest = ws.read_manifest()
        reports: dict[tuple[str, str], list[MetricReport]] = {}
        dti_rows: list[MapComparison] = []
        for k in range(manifest.slices):
            hr = ws.load_hr(k)
            acq = ws.load_acquisition(k)
            ws.save_baseline(k, baseline_reconstruct(acq, hr.shape[0]))

            methods = {"LR": ws.load_baseline(k)}
            for variant in (PRIOR_VARIANT, ABLATION_VARIANT):
                if variant == PRIOR_VARIANT or ws.has_renders(k, variant, "sr"):
                    methods[METHOD_LABELS[variant]] = ws.load_renders(k, variant, "sr")

            mask = evaluation_mask(hr.mask)
            splits = ["trained"] + (["unseen"] if hr.direction_set.held_out_indices else [])
            for method, images in methods.items():
                srs = {i: images[i] for i in range(len(images))}
                for split in splits:
                    report = evaluate_split(srs, hr, split, method=method, mask=mask)
                    ws.save_report(k, f"{method_slug(method)}_{split}", report)
                    reports.setdefault((split, method), []).append(report)

            comparisons = compare_dti(ws, k, mask)
            dti_rows.extend(comparisons)
            write_dwi_figures(ws, k, hr, methods, mask)
            write_dti_figures(ws, k, mask)
            if k == 0:
                write_line_profile(ws.tables_dir / "line_profile.csv", hr, methods)

        write_image_table(ws.tables_dir / "image_quality.csv", reports)
        write_dti_table(ws.tables_dir / "dti_maps.csv", dti_rows)
        write_summary(ws.summary_path, manifest, manifest_hash(manifest), reports, dti_rows)
        logger.info(f"summary written to {ws.summary_path}")
    return ws
