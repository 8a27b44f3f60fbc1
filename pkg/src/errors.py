"""
errors.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    Exception hierarchy shared by every module of the transport-mode toolkit.
    Each exception carries the process exit code the command-line driver
    reports when it escapes a run:
    - 1 configuration problems (shapes, selectors, recipes, suite files)
    - 2 dataset problems (missing or malformed SHL files)
    - 3 run failures (non-finite values, diverged training)
"""


class TmdError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigurationError(TmdError):
    """Invalid configuration: shape mismatch, bad selector, unknown recipe..."""

    exit_code = 1


class EngineStateError(TmdError):
    """An operation was invoked out of order (backward before forward, log power applied twice)."""

    exit_code = 1


class HeldOutAccessError(TmdError):
    """Test labels were read outside the final test run."""

    exit_code = 1


class NumericError(TmdError):
    """A forward or backward pass produced NaN or Inf."""

    exit_code = 3


class DatasetError(TmdError):
    """Base class for problems with the recordings on disk."""

    exit_code = 2


class MissingDatasetError(DatasetError):
    """The dataset directory or one of its channel files does not exist."""

    def __init__(self, path, detail: str = ""):
        self.path = path
        message = (f"SHL data not found at '{path}'. Download the SHL 2018 challenge "
                   "data and pass --shl-dir (or set TMD_SHL_DIR), or use "
                   "--synthetic n_per_class=K seed=S for a desk-scale dataset.")
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class DatasetFormatError(DatasetError):
    """A channel file does not follow the SHL text layout."""

    def __init__(self, file_name, line_number: int, detail: str):
        self.file_name = str(file_name)
        self.line_number = line_number
        super().__init__(f"{self.file_name}, line {line_number}: {detail}")


class InsufficientDataError(DatasetError):
    """Not enough recordings (or checkpoints) for the requested operation."""


class TrainingDivergedError(TmdError):
    """The training loss became non-finite; the run is aborted."""

    exit_code = 3

    def __init__(self, message: str, seed=None, epoch=None, batch=None):
        self.seed = seed
        self.epoch = epoch
        self.batch = batch
        super().__init__(message)
