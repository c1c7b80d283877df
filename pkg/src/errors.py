"""Exception types shared across the package."""

from pathlib import Path
from typing import Optional


class ConfigurationError(ValueError):
    """Invalid configuration, shape contract or pipeline order."""


class NonFiniteError(ArithmeticError):
    """A tensor with NaN or Inf reached a numerical primitive."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss and was aborted."""

    def __init__(self, message: str, checkpoint_path: Optional[Path] = None) -> None:
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
