"""
Error hierarchy shared by every package of the inpainting pipeline.

The command-line runner maps each family onto an exit code, so raise the most
specific class that describes the failure.
"""


class InpaintingError(Exception):
    """Base class for all pipeline errors."""


class ShapeError(InpaintingError, ValueError):
    """Tensor extents that do not fit the operation."""


class NumericalError(InpaintingError, ArithmeticError):
    """Non-finite values, failed gradient checks, diverged training."""


class DataError(InpaintingError, ValueError):
    """Bad input data, infeasible masks, unreadable dataset or checkpoint files."""


class ConfigError(InpaintingError, ValueError):
    """Unknown or invalid configuration values."""
