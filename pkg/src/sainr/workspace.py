"""
SA-INR — Experiment Workspace

Fixed artifact tree of one experiment directory and load/save helpers for
every artifact kind. Arrays go through the sidecar format in storage.py;
records are sorted-key JSON.

    <root>/manifest.json
    <root>/slice_<k>/directions.json
    <root>/slice_<k>/phantom/{tensors,s0,mask,labels}
    <root>/slice_<k>/hr/{b0,dwis}
    <root>/slice_<k>/acquisition/{views.json,lr,prior}
    <root>/slice_<k>/models/<variant>/{model.json,params,buffers/...,train_report.json,timing.json}
    <root>/slice_<k>/renders/<variant>/{trained,sr}
    <root>/slice_<k>/baseline/recon
    <root>/slice_<k>/dti/<label>/{tensor,valid,md,fa,ad,rd,ev1,ev1_fa}
    <root>/slice_<k>/reports/*.json
    <root>/slice_<k>/figures/*.pgm|*.ppm
    <root>/tables/*.csv, <root>/summary.txt
"""
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .models import (
    AcquisitionConfig,
    DirectionSet,
    ExperimentManifest,
    InrConfig,
    MetricReport,
    TrainReport,
    ViewAngle,
)
from .services.inr import InrModel, build_model
from .services.numerics import ParamVector, Segment
from .services.phantom import HrSliceSet, LrAcquisition, PhantomSlice
from .services.quant import MAP_NAMES, TensorMapSet
from .storage import (
    PathLike,
    StorageError,
    load_array,
    read_json,
    read_manifest,
    write_array,
    write_json,
    write_manifest,
)

logger = logging.getLogger(__name__)

PRIOR_VARIANT = "sainr"
ABLATION_VARIANT = "no_prior"


def variant_name(use_prior: bool) -> str:
    return PRIOR_VARIANT if use_prior else ABLATION_VARIANT


class Workspace:
    """Paths and persistence for one experiment directory."""

    def __init__(self, root: PathLike):
        self.root = Path(root)

    # --- Layout ---

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def tables_dir(self) -> Path:
        return self.root / "tables"

    @property
    def summary_path(self) -> Path:
        return self.root / "summary.txt"

    def slice_dir(self, k: int) -> Path:
        return self.root / f"slice_{k:02d}"

    def figures_dir(self, k: int) -> Path:
        return self.slice_dir(k) / "figures"

    def reports_dir(self, k: int) -> Path:
        return self.slice_dir(k) / "reports"

    def model_dir(self, k: int, variant: str) -> Path:
        return self.slice_dir(k) / "models" / variant

    def _require(self, path: Path) -> Path:
        if not path.exists():
            raise FileNotFoundError(f"missing artifact: {path}")
        return path

    def _load(self, base: Path) -> np.ndarray:
        self._require(base.with_name(base.name + ".json"))
        return load_array(base)

    def has_model(self, k: int, variant: str) -> bool:
        return (self.model_dir(k, variant) / "model.json").exists()

    # --- Manifest ---

    def write_manifest(self, manifest: ExperimentManifest) -> None:
        write_manifest(self.manifest_path, manifest)

    def read_manifest(self) -> ExperimentManifest:
        return read_manifest(self._require(self.manifest_path))

    # --- Directions and phantom ---

    def save_directions(self, k: int, dirs: DirectionSet) -> None:
        write_json(self.slice_dir(k) / "directions.json", dirs)

    def load_directions(self, k: int) -> DirectionSet:
        path = self._require(self.slice_dir(k) / "directions.json")
        return DirectionSet.model_validate(read_json(path))

    def save_phantom(self, k: int, phantom: PhantomSlice) -> None:
        base = self.slice_dir(k) / "phantom"
        write_array(base / "tensors", phantom.tensors, units="mm^2/s")
        write_array(base / "s0", phantom.s0, units="a.u.")
        write_array(base / "mask", phantom.mask.astype(np.float64))
        write_array(base / "labels", phantom.labels.astype(np.float64))

    def load_phantom(self, k: int) -> PhantomSlice:
        base = self.slice_dir(k) / "phantom"
        s0 = self._load(base / "s0")
        height, width = s0.shape
        return PhantomSlice(
            width=width, height=height,
            tensors=self._load(base / "tensors"),
            s0=s0,
            mask=self._load(base / "mask") > 0.5,
            labels=self._load(base / "labels").astype(np.int64),
        )

    def save_hr(self, k: int, hr: HrSliceSet) -> None:
        base = self.slice_dir(k) / "hr"
        write_array(base / "b0", hr.b0, units="a.u.")
        write_array(base / "dwis", hr.dwis, units="a.u.")

    def load_hr(self, k: int) -> HrSliceSet:
        base = self.slice_dir(k) / "hr"
        return HrSliceSet(
            b0=self._load(base / "b0"),
            dwis=self._load(base / "dwis"),
            direction_set=self.load_directions(k),
            mask=self.load_phantom(k).mask,
        )

    # --- Acquisition ---

    def save_acquisition(self, k: int, acq: LrAcquisition, prior: np.ndarray) -> None:
        base = self.slice_dir(k) / "acquisition"
        write_json(base / "views.json", {
            "config": acq.config.model_dump(mode="json"),
            "hr_shape": list(acq.hr_shape),
            "views": [view.model_dump(mode="json") for view in acq.views],
        })
        write_array(base / "lr", acq.images, units="a.u.")
        write_array(base / "prior", prior, units="a.u.")

    def load_acquisition(self, k: int) -> LrAcquisition:
        base = self.slice_dir(k) / "acquisition"
        record = read_json(self._require(base / "views.json"))
        return LrAcquisition(
            views=[ViewAngle.model_validate(v) for v in record["views"]],
            images=self._load(base / "lr"),
            config=AcquisitionConfig.model_validate(record["config"]),
            direction_set=self.load_directions(k),
            hr_shape=tuple(record["hr_shape"]),
        )

    def load_prior(self, k: int) -> np.ndarray:
        return self._load(self.slice_dir(k) / "acquisition" / "prior")

    # --- Models ---

    def save_model(self, k: int, variant: str, model: InrModel, seed: int) -> None:
        """Flat trainable vector plus the fixed buffers, enough to rebuild the model exactly."""
        base = self.model_dir(k, variant)
        params = ParamVector.from_module(model)
        write_json(base / "model.json", {
            "inr": model.config.model_dump(mode="json"),
            "use_prior": model.use_prior,
            "seed": seed,
            "layout": [[seg.name, list(seg.shape)] for seg in params.layout],
            "buffers": [name for name, _ in model.named_buffers()],
        })
        write_array(base / "params", params.values.detach().numpy())
        for name, buf in model.named_buffers():
            write_array(base / "buffers" / name, buf.detach().numpy())

    def load_model(self, k: int, variant: str) -> InrModel:
        base = self.model_dir(k, variant)
        record = read_json(self._require(base / "model.json"))
        buffers = {name: self._load(base / "buffers" / name) for name in record["buffers"]}
        model = build_model(
            InrConfig.model_validate(record["inr"]),
            buffers["b0"],
            seed=record["seed"],
            use_prior=record["use_prior"],
            signal_scale=float(buffers["signal_scale"]),
        )
        owned = dict(model.named_buffers())
        if set(owned) != set(buffers):
            raise StorageError(f"{base}: checkpoint buffers {sorted(buffers)} do not match the model")
        with torch.no_grad():
            for name, value in buffers.items():
                owned[name].copy_(torch.from_numpy(value))

        layout, cursor = [], 0
        for name, shape in record["layout"]:
            n = int(np.prod(shape, dtype=np.int64))
            layout.append(Segment(name, cursor, cursor + n, tuple(shape)))
            cursor += n
        values = torch.from_numpy(self._load(base / "params"))
        expected = [(seg.name, seg.shape) for seg in ParamVector.from_module(model).layout]
        if [(seg.name, seg.shape) for seg in layout] != expected:
            raise StorageError(f"{base}: parameter layout does not match the configured architecture")
        ParamVector(values, tuple(layout)).load_into(model)
        return model

    def save_train_report(self, k: int, variant: str, report: TrainReport) -> None:
        base = self.model_dir(k, variant)
        write_json(base / "train_report.json", report.model_dump(mode="json", exclude={"wall_time"}))
        # the only non-reproducible value of a run lives in its own file
        write_json(base / "timing.json", {"wall_time": report.wall_time})

    def load_train_report(self, k: int, variant: str) -> TrainReport:
        base = self.model_dir(k, variant)
        record = read_json(self._require(base / "train_report.json"))
        timing = read_json(base / "timing.json") if (base / "timing.json").exists() else {"wall_time": 0.0}
        return TrainReport.model_validate({**record, **timing})

    # --- Reconstructions ---

    def save_renders(self, k: int, variant: str, name: str, images: np.ndarray) -> None:
        write_array(self.slice_dir(k) / "renders" / variant / name, images, units="a.u.")

    def load_renders(self, k: int, variant: str, name: str) -> np.ndarray:
        return self._load(self.slice_dir(k) / "renders" / variant / name)

    def has_renders(self, k: int, variant: str, name: str) -> bool:
        return (self.slice_dir(k) / "renders" / variant / f"{name}.json").exists()

    def save_baseline(self, k: int, images: np.ndarray) -> None:
        write_array(self.slice_dir(k) / "baseline" / "recon", images, units="a.u.")

    def load_baseline(self, k: int) -> np.ndarray:
        return self._load(self.slice_dir(k) / "baseline" / "recon")

    # --- DTI maps ---

    def dti_dir(self, k: int, label: str) -> Path:
        return self.slice_dir(k) / "dti" / label

    def save_maps(self, k: int, label: str, maps: TensorMapSet, tensor: np.ndarray,
                  indices: list[int]) -> None:
        base = self.dti_dir(k, label)
        write_json(base / "fit.json", {"label": label, "directions": indices})
        write_array(base / "tensor", tensor, units="mm^2/s")
        write_array(base / "valid", maps.mask.astype(np.float64))
        write_array(base / "eigenvalues", maps.eigenvalues, units="mm^2/s")
        for name in MAP_NAMES:
            write_array(base / name, maps.get(name))

    def load_maps(self, k: int, label: str) -> TensorMapSet:
        base = self.dti_dir(k, label)
        self._require(base / "fit.json")
        maps = {name: self._load(base / name) for name in MAP_NAMES}
        mask = self._load(base / "valid") > 0.5
        return TensorMapSet(eigenvalues=self._load(base / "eigenvalues"), mask=mask, **maps)

    def fit_directions(self, k: int, label: str) -> list[int]:
        return list(read_json(self._require(self.dti_dir(k, label) / "fit.json"))["directions"])

    def has_maps(self, k: int, label: str) -> bool:
        return (self.dti_dir(k, label) / "fit.json").exists()

    # --- Reports ---

    def save_report(self, k: int, name: str, report: MetricReport) -> None:
        write_json(self.reports_dir(k) / f"{name}.json", report)

    def load_report(self, k: int, name: str) -> Optional[MetricReport]:
        path = self.reports_dir(k) / f"{name}.json"
        if not path.exists():
            return None
        return MetricReport.model_validate(read_json(path))
