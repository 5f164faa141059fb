"""
SA-INR — Training and Inference Stages
"""
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from ..services.inr import CoordGrid, InrModel
from ..services.trainer import infer_direction, train_slice
from ..workspace import Workspace, variant_name
from .common import stage

logger = logging.getLogger(__name__)


def render_indices(model: InrModel, grid: CoordGrid, vectors: np.ndarray, indices: list[int]) -> np.ndarray:
    return np.stack([infer_direction(model, grid, vectors[i]).numpy() for i in indices])


def cmd_train(out: Path, use_prior: Optional[bool] = None) -> Workspace:
    """
    Train one INR per slice on its LR views and b=0 prior.

    The checkpoint is reloaded before rendering the trained directions, so the
    stored renders match what `infer` produces from the same checkpoint.
    """
    ws = Workspace(out)
    with stage("train"):
        manifest = ws.read_manifest()
        cfg = manifest.train_config(use_prior)
        variant = variant_name(cfg.use_prior)
        for k in range(manifest.slices):
            acq = ws.load_acquisition(k)
            prior = ws.load_prior(k)
            model, report = train_slice(acq, prior, cfg)
            ws.save_model(k, variant, model, cfg.seed)
            ws.save_train_report(k, variant, report)

            model = ws.load_model(k, variant)
            grid = CoordGrid(*acq.hr_shape)
            trained = acq.direction_set.train_indices
            ws.save_renders(k, variant, "trained",
                            render_indices(model, grid, acq.direction_set.vectors, trained))
            logger.info(
                f"slice {k} [{variant}]: loss {report.initial_loss:.6g} -> {report.final_loss:.6g} "
                f"in {report.wall_time:.1f}s"
            )
    return ws


def cmd_infer(out: Path, use_prior: Optional[bool] = None) -> Workspace:
    """Render every direction, trained and held-out, from the stored checkpoint."""
    ws = Workspace(out)
    with stage("infer"):
        manifest = ws.read_manifest()
        variant = variant_name(manifest.train_config(use_prior).use_prior)
        for k in range(manifest.slices):
            dirs = ws.load_directions(k)
            model = ws.load_model(k, variant)
            grid = CoordGrid(*model.b0.shape)
            ws.save_renders(k, variant, "sr", render_indices(model, grid, dirs.vectors, list(range(len(dirs)))))
            logger.info(
                f"slice {k} [{variant}]: rendered {len(dirs.train_indices)} trained and "
                f"{len(dirs.held_out_indices)} zero-shot directions"
            )
    return ws
