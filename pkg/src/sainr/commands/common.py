"""
SA-INR — Stage Plumbing

Stage tagging for CLI failures and the mapping from exceptions to exit codes.
"""
import logging
from contextlib import contextmanager
from typing import Generator

from ..services.numerics import NonFiniteError
from ..services.trainer import TrainingAbortedError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class StageFailure(Exception):
    """A pipeline stage failed; wraps the original error with the stage name."""

    def __init__(self, stage: str, error: BaseException):
        super().__init__(f"[{stage}] {error}")
        self.stage = stage
        self.error = error

    @property
    def exit_code(self) -> int:
        if isinstance(self.error, (NonFiniteError, TrainingAbortedError)):
            return EXIT_NUMERICAL
        return EXIT_DATA


@contextmanager
def stage(name: str) -> Generator[None, None, None]:
    """Tag any exception raised inside the block with the stage name."""
    logger.info(f"[{name}] started")
    try:
        yield
    except StageFailure:
        raise
    except Exception as e:
        raise StageFailure(name, e) from e
    logger.info(f"[{name}] done")
