"""Numerics for the stochastic Kimura equation on the half line."""
from ._backend import COMPILED

__version__ = "0.1.0"

__all__ = ["COMPILED", "__version__"]
