"""
Error types shared by every part of the forecaster.

Each error carries the process exit code the CLI uses for it:

    0  success
    1  usage / configuration error   (ConfigError, ShapeError)
    2  data error                    (DataError)
    3  numerical failure             (NumericalError)

ShapeError also subclasses ValueError so library callers can catch it the
ordinary way.
"""


class MPSTNError(Exception):
    """Base class for all errors raised on purpose by this project."""

    exit_code = 1


class ConfigError(MPSTNError):
    """Invalid configuration values, unknown config keys, bad CLI usage."""

    exit_code = 1


class ShapeError(MPSTNError, ValueError):
    """Tensor shapes that do not fit together."""

    exit_code = 1


class DataError(MPSTNError):
    """Missing or malformed input data, corrupt files, uncovered cells."""

    exit_code = 2


class NumericalError(MPSTNError):
    """NaN / Inf values in losses or gradients."""

    exit_code = 3


class TrainingDiverged(NumericalError):
    """
    Training produced a non-finite loss.

    `last_good` holds the most recent checkpoint taken before the failure
    (or None if it happened before the first epoch finished).
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good
