"""Exactly solvable nonlinear-volatility diffusions with affine drift."""

from .logvalue import LogValue

__version__ = "0.1.0"

__all__ = ["LogValue", "__version__"]
