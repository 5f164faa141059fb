"""
SA-INR — Trainer

Self-supervised fitting of one INR per slice against its thick-slice views,
zero-shot inference at arbitrary directions, and the interpolation baseline
the reconstructions are compared with.
"""
import logging
import time
from typing import Iterable, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch.func import functional_call

from ..models import TrainConfig, TrainReport
from .geometry import project, rotate
from .inr import CoordGrid, InrError, InrModel, build_model, render_directions, render_slice
from .numerics import NonFiniteError, OptimizerState, ParamVector, compute_gradient, optimizer_step
from .phantom import LrAcquisition

logger = logging.getLogger(__name__)


class TrainerError(ValueError):
    """Inconsistent training inputs."""
    pass


class LeakageError(TrainerError):
    """A held-out direction was offered to the training loss."""
    pass


class TrainingAbortedError(RuntimeError):
    """The loss or its gradient went non-finite at `iteration`."""

    def __init__(self, iteration: int, segment: Optional[str] = None):
        where = f" in segment '{segment}'" if segment else ""
        super().__init__(f"non-finite loss or gradient at iteration {iteration}{where}")
        self.iteration = iteration
        self.segment = segment


def projection_mse(rendered: torch.Tensor, thetas, targets: torch.Tensor, t_s: int) -> torch.Tensor:
    """Mean over directions of the pixel MSE between M(rendered) and the LR targets."""
    predicted = project(rendered, thetas, t_s)
    if predicted.shape != targets.shape:
        raise TrainerError(f"projected shape {tuple(predicted.shape)} != LR shape {tuple(targets.shape)}")
    return ((predicted - targets) ** 2).mean(dim=(-2, -1)).mean()


def _check_indices(acq: LrAcquisition, indices: list[int]) -> None:
    if not indices:
        raise TrainerError("no directions selected")
    n = len(acq.direction_set)
    out_of_range = [i for i in indices if not 0 <= i < n]
    if out_of_range:
        raise TrainerError(f"direction indices {out_of_range} outside [0, {n})")
    held_out = set(acq.direction_set.held_out_indices)
    leaked = [i for i in indices if i in held_out]
    if leaked:
        raise LeakageError(f"held-out directions {leaked} cannot enter the training loss")


def data_consistency_loss(model: InrModel, acq: LrAcquisition, grid: CoordGrid,
                          dir_indices: Iterable[int],
                          params: Optional[ParamVector] = None) -> torch.Tensor:
    """
    Self-supervised data term over the selected training directions.

    With `params`, the model is evaluated functionally at those values so the
    loss is differentiable with respect to the flat vector.
    """
    indices = [int(i) for i in dir_indices]
    _check_indices(acq, indices)
    directions = acq.direction_set.vectors[indices]
    if params is None:
        rendered = render_directions(model, grid, directions)
    else:
        dirs = torch.from_numpy(directions)
        rendered = functional_call(model, params.as_dict(), (grid.coords, dirs))
        rendered = rendered.reshape(len(indices), grid.height, grid.width)
    targets = torch.from_numpy(np.ascontiguousarray(acq.images[indices], dtype=np.float64))
    thetas = [acq.views[i].theta for i in indices]
    return projection_mse(rendered, thetas, targets, acq.config.thickness_factor)


def initial_signal_scale(b0: np.ndarray) -> float:
    peak = float(np.max(b0))
    return peak if peak > 0.0 else 1.0


def train_slice(acq: LrAcquisition, b0: np.ndarray, cfg: TrainConfig) -> tuple[InrModel, TrainReport]:
    """
    Fit a fresh INR to one slice's LR views.

    Only the training split is ever sampled; HR DWIs are not an input. The
    result is a deterministic function of (acq, b0, cfg).

    Args:
        acq: LR views with their angles and the train/held-out split
        b0: HR b=0 image, the structural prior and the source of the signal scale
        cfg: Optimizer budget, model variant, architecture and seed

    Returns:
        Tuple of (trained model, report with the loss curve and wall time)

    Raises:
        TrainerError: b0 shape or batch size inconsistent with the acquisition
        TrainingAbortedError: a loss, gradient, parameter or activation went non-finite
    """
    b0 = np.asarray(b0, dtype=np.float64)
    if b0.shape != tuple(acq.hr_shape):
        raise TrainerError(f"b=0 image shape {b0.shape} does not match HR shape {acq.hr_shape}")
    train_indices = acq.direction_set.train_indices
    if cfg.directions_per_step > len(train_indices):
        raise TrainerError(
            f"directions_per_step={cfg.directions_per_step} exceeds {len(train_indices)} training directions"
        )

    height, width = acq.hr_shape
    grid = CoordGrid(height, width)
    model = build_model(cfg.inr, b0, seed=cfg.seed, use_prior=cfg.use_prior,
                        signal_scale=initial_signal_scale(b0))
    params = ParamVector.from_module(model)
    state = OptimizerState.fresh(params, learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)

    logger.info(
        f"training {len(params)} parameters for {cfg.iterations} iterations "
        f"({cfg.directions_per_step}/{len(train_indices)} directions per step, prior={cfg.use_prior})"
    )
    curve: list[tuple[int, float]] = []
    initial_loss = loss = float("nan")
    start = time.perf_counter()
    for iteration in range(1, cfg.iterations + 1):
        batch = sorted(rng.choice(train_indices, size=cfg.directions_per_step, replace=False).tolist())
        try:
            loss, grad = compute_gradient(
                lambda p: data_consistency_loss(model, acq, grid, batch, params=p), params
            )
            params, state = optimizer_step(params, grad, state)
            params.require_finite()
        except NonFiniteError as exc:
            raise TrainingAbortedError(iteration, exc.segment) from exc
        except InrError as exc:
            if exc.layer is None:
                raise
            raise TrainingAbortedError(iteration, f"layer {exc.layer}") from exc
        if iteration == 1:
            initial_loss = loss
        if iteration == 1 or iteration % cfg.log_every == 0 or iteration == cfg.iterations:
            curve.append((iteration, loss))
            logger.info(f"iteration {iteration}/{cfg.iterations} loss={loss:.6g}")

    params.load_into(model)
    wall_time = time.perf_counter() - start
    logger.info(f"training finished in {wall_time:.1f}s, loss {initial_loss:.6g} -> {loss:.6g}")
    return model, TrainReport(loss_curve=curve, initial_loss=initial_loss, final_loss=loss, wall_time=wall_time)


def infer_direction(model: InrModel, grid: CoordGrid, g) -> torch.Tensor:
    """Zero-shot query: the same render path for trained and unseen g, no weight update."""
    with torch.no_grad():
        return render_slice(model, grid, g)


def baseline_reconstruct(acq: LrAcquisition, target_height: int) -> np.ndarray:
    """
    Per direction: linear upsampling along the slice axis to `target_height`,
    then rotation by -theta back to the common frame. Returns (N, H, W).
    """
    images = torch.from_numpy(np.ascontiguousarray(acq.images, dtype=np.float64))
    _, _, width = images.shape
    with torch.no_grad():
        upsampled = F.interpolate(images[:, None], size=(target_height, width), mode="bilinear",
                                  align_corners=False)[:, 0]
        recon = [rotate(up, view.theta, "inverse") for up, view in zip(upsampled, acq.views)]
    return torch.stack(recon).numpy()
