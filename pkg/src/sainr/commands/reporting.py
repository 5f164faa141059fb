"""
SA-INR — Figures, Tables and Summary

Deterministic renderings of the evaluation: DWI and DTI-map PGMs with error
maps, colour-FA PPMs, the image-quality and DTI CSV tables, the line profile
and the plain-text summary.
"""
import logging
from pathlib import Path

import numpy as np

from ..models import ExperimentManifest, MapComparison, MetricReport
from ..services.geometry import nyquist_views
from ..services.metrics import error_map, line_profile, merge_reports
from ..services.phantom import HrSliceSet
from ..services.quant import color_fa
from ..storage import export_pgm, export_ppm, write_csv
from ..workspace import ABLATION_VARIANT, PRIOR_VARIANT, Workspace

logger = logging.getLogger(__name__)

METHOD_LABELS = {PRIOR_VARIANT: "SR", ABLATION_VARIANT: "SR w/o b=0"}
METHOD_ORDER = ("LR", "SR", "SR w/o b=0")
SPLIT_TITLES = {
    "trained": "(A) Spatial SR, trained directions",
    "unseen": "(B) Angular SR, unseen directions",
}
METRIC_KEYS = ("psnr", "ssim", "nmse", "nmse_ratio")

# display windows for DTI maps (mm^2/s for diffusivities)
MAP_WINDOWS = {"md": (0.0, 3e-3), "fa": (0.0, 1.0)}
MAP_ERROR_WINDOWS = {"md": (0.0, 5e-4), "fa": (0.0, 0.3)}
DTI_FIGURE_REFERENCES = {"phantom": None, "gt": "phantom", "res_trained": "gt", "res_all": "gt"}


def method_slug(method: str) -> str:
    return {"LR": "baseline", "SR": PRIOR_VARIANT, "SR w/o b=0": ABLATION_VARIANT}.get(method, method)


def _figure_directions(hr: HrSliceSet) -> list[int]:
    dirs = hr.direction_set
    picks = dirs.train_indices[:1] + dirs.held_out_indices[:1]
    return picks


def write_dwi_figures(ws: Workspace, k: int, hr: HrSliceSet, methods: dict[str, np.ndarray],
                      mask: np.ndarray) -> None:
    """GT, every method and its absolute error for one trained and one unseen direction."""
    out = ws.figures_dir(k)
    for i in _figure_directions(hr):
        gt = hr.dwis[i]
        hi = float(gt[mask].max())
        if hi <= 0.0:
            continue
        export_pgm(gt, out / f"dwi_{i:02d}_gt.pgm", (0.0, hi))
        for method, images in methods.items():
            slug = method_slug(method)
            export_pgm(images[i], out / f"dwi_{i:02d}_{slug}.pgm", (0.0, hi))
            export_pgm(error_map(images[i], gt), out / f"dwi_{i:02d}_{slug}_error.pgm", (0.0, 0.2 * hi))


def write_dti_figures(ws: Workspace, k: int, mask: np.ndarray) -> None:
    """MD and FA maps, their error against the reference fit, and colour FA."""
    out = ws.figures_dir(k)
    for label, reference in DTI_FIGURE_REFERENCES.items():
        if not ws.has_maps(k, label):
            continue
        maps = ws.load_maps(k, label)
        for name, window in MAP_WINDOWS.items():
            export_pgm(maps.get(name), out / f"{label}_{name}.pgm", window)
        export_ppm(color_fa(maps), out / f"{label}_color_fa.ppm")
        if reference is None or not ws.has_maps(k, reference):
            continue
        ref = ws.load_maps(k, reference)
        for name, window in MAP_ERROR_WINDOWS.items():
            err = np.where(mask, error_map(maps.get(name), ref.get(name)), 0.0)
            export_pgm(err, out / f"{label}_{name}_error.pgm", window)


def write_line_profile(path: Path, hr: HrSliceSet, methods: dict[str, np.ndarray]) -> None:
    """Intensities along the center row for one trained and one unseen direction."""
    row = hr.shape[0] // 2
    records = []
    for i in _figure_directions(hr):
        split = "trained" if hr.direction_set.split[i] == "train" else "unseen"
        images = {"GT": hr.dwis[i], **{m: imgs[i] for m, imgs in methods.items()}}
        for rec in line_profile(images, row):
            records.append({"direction": i, "split": split, "row": row, **rec})
    fields = ["direction", "split", "row", "column", "GT", *methods.keys()]
    write_csv(path, records, fields)


def _ordered(reports: dict[tuple[str, str], list[MetricReport]], split: str) -> list[MetricReport]:
    merged = []
    for method in METHOD_ORDER:
        if (split, method) in reports:
            merged.append(merge_reports(reports[(split, method)]))
    return merged


def write_image_table(path: Path, reports: dict[tuple[str, str], list[MetricReport]]) -> None:
    """Mean and population std of every metric, one row per (split, method), pooled over slices."""
    rows = []
    for split in SPLIT_TITLES:
        for report in _ordered(reports, split):
            row = {"split": split, "method": report.method, "directions": len(report.directions)}
            for key in METRIC_KEYS:
                row[f"{key}_mean"] = report.aggregates[key].mean
                row[f"{key}_std"] = report.aggregates[key].std
            rows.append(row)
    fields = ["split", "method", "directions"] + [f"{k}_{s}" for k in METRIC_KEYS for s in ("mean", "std")]
    write_csv(path, rows, fields)


def write_dti_table(path: Path, comparisons: list[MapComparison]) -> None:
    names = ("md", "fa", "ad", "rd", "ev1", "ev1_fa")
    rows = [
        {"slice": c.slice_index, "label": c.label, "reference": c.reference,
         "directions": c.direction_count, **{f"nmse_{n}": c.nmse[n] for n in names}}
        for c in comparisons
    ]
    write_csv(path, rows, ["slice", "label", "reference", "directions", *[f"nmse_{n}" for n in names]])


def _mean_std(report: MetricReport, key: str, digits: int) -> str:
    agg = report.aggregates[key]
    return f"{agg.mean:.{digits}f}({agg.std:.{digits}f})"


def write_summary(path: Path, manifest: ExperimentManifest, digest: str,
                  reports: dict[tuple[str, str], list[MetricReport]],
                  comparisons: list[MapComparison]) -> None:
    """One-page plain-text summary shaped like the image-quality and DTI tables."""
    acq, dirs, train = manifest.acquisition, manifest.directions, manifest.training
    lines = [
        "SA-INR desk reproduction",
        f"version {manifest.version}, manifest sha256 {digest}",
        "",
        f"{manifest.slices} slice(s) of {manifest.phantom.size}x{manifest.phantom.size}, "
        f"{dirs.count} directions ({dirs.train} trained, {dirs.count - dirs.train} held out), b={dirs.b_value:g}",
        f"t_s={acq.thickness_factor}, 1 view per direction (classical bound {nyquist_views(acq.thickness_factor)}), "
        f"noise {acq.noise_model} sigma={acq.noise_sigma:g}",
        f"{train.iterations} iterations, {train.directions_per_step} directions per step, lr={train.learning_rate:g}, "
        f"seeds data={manifest.seed_data} train={manifest.seed_train}",
    ]

    for split, title in SPLIT_TITLES.items():
        ordered = _ordered(reports, split)
        if not ordered:
            continue
        lines += ["", f"{title}, Mean(Std)",
                  f"{'method':<12}{'PSNR':>18}{'SSIM':>18}{'NMSE':>22}{'NMSE DWI/S0':>22}"]
        for r in ordered:
            lines.append(
                f"{r.method:<12}{_mean_std(r, 'psnr', 2):>18}{_mean_std(r, 'ssim', 4):>18}"
                f"{_mean_std(r, 'nmse', 6):>22}{_mean_std(r, 'nmse_ratio', 6):>22}"
            )

    if comparisons:
        lines += ["", "Downstream DTI, NMSE against reference",
                  f"{'slice':<7}{'fit':<12}{'reference':<12}{'MD':>12}{'FA':>12}{'AD':>12}{'RD':>12}{'EV1xFA':>12}"]
        for c in comparisons:
            lines.append(
                f"{c.slice_index:<7}{c.label:<12}{c.reference:<12}"
                + "".join(f"{c.nmse[n]:>12.3e}" for n in ("md", "fa", "ad", "rd", "ev1_fa"))
            )

    gains = []
    for split in SPLIT_TITLES:
        by_method = {r.method: r for r in _ordered(reports, split)}
        if "SR" in by_method and "LR" in by_method:
            gain = by_method["SR"].aggregates["psnr"].mean - by_method["LR"].aggregates["psnr"].mean
            gains.append(f"{split} {gain:+.2f} dB")
    if gains:
        lines += ["", "SR minus LR mean PSNR: " + ", ".join(gains)]

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
