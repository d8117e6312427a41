"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
numerical divergence exits 3.
"""


class ConfigError(ValueError):
    """Invalid configuration value, missing file, or violated contract."""


class DataFormatError(ConfigError):
    """A dataset file failed format validation."""


class NonFiniteGradientError(ArithmeticError):
    """A gradient contained NaN or Inf."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss.

    Carries the round logs completed so far so callers can flush them
    before reporting the failure.
    """

    def __init__(self, message, round_logs=()):
        super().__init__(message)
        self.round_logs = list(round_logs)
