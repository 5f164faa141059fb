"""
SA-INR — Full Reproduction

The default protocol end to end, as the exact sequence of the individual
stages, so that a staged run and a monolithic run write identical trees.
"""
import logging
from pathlib import Path

from ..models import ExperimentManifest
from ..workspace import Workspace
from .acquisition import cmd_acquire, cmd_phantom
from .analysis import cmd_dti, cmd_evaluate
from .training import cmd_infer, cmd_train

logger = logging.getLogger(__name__)


def cmd_reproduce(out: Path, manifest: ExperimentManifest) -> Workspace:
    """phantom -> acquire -> train -> infer -> dti -> evaluate, plus the prior-free variant when requested."""
    cmd_phantom(out, manifest)
    cmd_acquire(out)
    variants = [True, False] if manifest.ablation else [True]
    for use_prior in variants:
        cmd_train(out, use_prior=use_prior)
    for use_prior in variants:
        cmd_infer(out, use_prior=use_prior)
    cmd_dti(out)
    ws = cmd_evaluate(out)
    logger.info(f"experiment written to {ws.root}")
    return ws
