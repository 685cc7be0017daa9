from __future__ import annotations

from typing import Optional


class ChfError(Exception):
    """Base class for every error raised by chfnet."""

    exit_code = 1


class ValidationError(ChfError, ValueError):
    exit_code = 2


class LutFormatError(ValidationError):
    pass


class GridIncompleteError(ValidationError):
    pass


class AxisOrderError(ValidationError):
    pass


class OutOfRangeError(ValidationError):
    pass


class ShapeMismatchError(ValidationError):
    pass


class ZeroVarianceError(ValidationError):
    def __init__(self, column: str) -> None:
        super().__init__(f"Column {column!r} has zero variance and cannot be standardized.")
        self.column = column


class NotStandardizedError(ValidationError):
    pass


class TrainingDivergedError(ChfError, RuntimeError):
    exit_code = 3

    def __init__(self, epoch: int, batch: int, loss: float) -> None:
        super().__init__(f"Training diverged at epoch {epoch}, batch {batch}: loss={loss!r}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class PipelineStageError(ChfError):
    """Wraps an upstream failure with the name of the pipeline stage it came from."""

    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:  # type: ignore[override]
        return exit_code_for(self.cause)


def exit_code_for(exc: Optional[BaseException]) -> int:
    if isinstance(exc, PipelineStageError):
        return exit_code_for(exc.cause)
    if isinstance(exc, ChfError):
        return exc.exit_code
    return 1
