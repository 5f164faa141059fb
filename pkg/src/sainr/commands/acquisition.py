"""
SA-INR — Phantom and Acquisition Stages

`phantom` writes the manifest, the direction set and the ground truth of every
slice; `acquire` simulates the thick-slice views and stores the b=0 prior.
"""
import logging
from pathlib import Path

from ..models import ExperimentManifest
from ..services.phantom import acquire, build_phantom, degrade_prior, fibonacci_directions, synthesize_hr
from ..workspace import Workspace
from .common import stage

logger = logging.getLogger(__name__)


def cmd_phantom(out: Path, manifest: ExperimentManifest) -> Workspace:
    """Write the manifest and the per-slice phantom, directions and HR DWIs."""
    ws = Workspace(out)
    with stage("phantom"):
        ws.write_manifest(manifest)
        dirs = fibonacci_directions(
            manifest.directions.count,
            seed=manifest.seed_data,
            n_train=manifest.directions.train,
            b_value=manifest.directions.b_value,
        )
        size = manifest.phantom.size
        for k in range(manifest.slices):
            phantom = build_phantom(size, size, layout_seed=manifest.slice_seed(k))
            hr = synthesize_hr(phantom, dirs)
            ws.save_directions(k, dirs)
            ws.save_phantom(k, phantom)
            ws.save_hr(k, hr)
            logger.info(f"slice {k}: {size}x{size} phantom, {len(dirs)} directions -> {ws.slice_dir(k)}")
    return ws


def cmd_acquire(out: Path) -> Workspace:
    """Simulate one thick-slice view per direction from the stored HR DWIs."""
    ws = Workspace(out)
    with stage("acquire"):
        manifest = ws.read_manifest()
        for k in range(manifest.slices):
            hr = ws.load_hr(k)
            cfg = manifest.acquisition_config(k)
            acq = acquire(hr, cfg)
            prior = degrade_prior(hr.b0, cfg) if cfg.degrade_prior else hr.b0
            ws.save_acquisition(k, acq, prior)
            logger.info(f"slice {k}: {len(acq.views)} LR views of {acq.images.shape[1:]} pixels")
    return ws
